use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::known_sigma_reference;
use crate::error::{Error, Result};
use crate::numcore::{chisq_quantile, chisq_sf, mvn_sample, quad_form, std_normal_quantile, CovarianceModel, RngStream};
use crate::procedures::{run_closed, run_procedure, KnownSigmaSubsets, ProcedureKind, MAX_CLOSED_K};
use crate::pvalues::{p_indiv_two_sided, GlobalTestKind, TestSpec};

/// Bivariate known-`Σ` power curve over means on the ellipse
/// `μᵀΣ⁻¹μ = r²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurveSpec {
    pub r: f64,
    pub phis: Vec<f64>,
    pub rho: f64,
    pub alpha: f64,
    pub draws: usize,
    pub reference_draws: usize,
    /// Global test compared with MinP and EMinP; its sidedness sets the
    /// individual tests.
    pub global: GlobalTestKind,
}

impl PowerCurveSpec {
    pub fn new(r: f64, rho: f64, global: GlobalTestKind) -> Self {
        Self {
            r,
            phis: Self::default_grid(),
            rho,
            alpha: 0.05,
            draws: 100_000,
            reference_draws: 100_000,
            global,
        }
    }

    /// Thirteen equally spaced angles on `[0, π]`.
    pub fn default_grid() -> Vec<f64> {
        (0..13).map(|i| std::f64::consts::PI * i as f64 / 12.0).collect()
    }

    /// `μ₁ = r cos φ`, `μ₂ = ρμ₁ ± √((1−ρ²)(r²−μ₁²))` with the sign of `μ₁`.
    pub fn mean_at(&self, phi: f64) -> Result<[f64; 2]> {
        let mu1 = self.r * phi.cos();
        let gap = self.r * self.r - mu1 * mu1;
        if gap < -1e-12 * self.r * self.r {
            return Err(Error::Domain(format!("r² < μ₁² at φ = {phi}")));
        }
        let root = ((1.0 - self.rho * self.rho) * gap.max(0.0)).sqrt();
        let mu2 = if mu1 >= 0.0 { self.rho * mu1 + root } else { self.rho * mu1 - root };
        Ok([mu1, mu2])
    }

    fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidParameter("r must be finite and nonnegative".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("alpha must lie in (0, 1)".into()));
        }
        if self.phis.is_empty() || self.draws < 100 {
            return Err(Error::InvalidParameter("need angles and at least 100 draws".into()));
        }
        Ok(())
    }
}

/// Rejection rate of one test at one angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub phi: f64,
    pub mu: [f64; 2],
    pub test: String,
    pub power: f64,
    pub se: f64,
}

impl CurvePoint {
    pub const CSV_HEADER: &'static str = "phi,mu1,mu2,test,power,se";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{},{:.6},{:.6}",
            self.phi, self.mu[0], self.mu[1], self.test, self.power, self.se
        )
    }
}

fn rate(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Global powers of the chosen global test, MinP and EMinP along the
/// curve. All angles and tests share one set of noise draws. With the LR
/// test the noncentral chi-square power `P(χ²₂(r²) > F⁻¹(1−α))` is added as
/// `lr_noncentral`, estimated from its own draws.
pub fn power_curve(spec: &PowerCurveSpec, stream: RngStream) -> Result<Vec<CurvePoint>> {
    spec.validate()?;
    let sigma = CovarianceModel::equicorrelation(spec.rho, 2)?;
    let test = TestSpec::from_global(spec.global.resolve(&sigma, stream.substream(0))?);
    let reference = known_sigma_reference(&sigma, &test, spec.reference_draws, stream.substream(1))?;
    let c_e = reference.critical_value(spec.alpha);
    let c_m = reference.minp_critical_value(spec.alpha);
    let noise = mvn_sample(&sigma, spec.draws, stream.substream(2))?;
    let noncentral = if test.global == GlobalTestKind::LrChisq {
        let z = mvn_sample(&CovarianceModel::identity(2)?, spec.draws, stream.substream(3))?;
        let q = chisq_quantile(1.0 - spec.alpha, 2)?;
        let hits = (0..spec.draws)
            .filter(|&d| {
                let row = z.row(d);
                (row[0] + spec.r).powi(2) + row[1].powi(2) > q
            })
            .count();
        Some(rate(hits, spec.draws))
    } else {
        None
    };

    let mut out = Vec::new();
    for &phi in &spec.phis {
        let mu = spec.mean_at(phi)?;
        let r2 = sigma.quad_form(&mu)?;
        if (r2 - spec.r * spec.r).abs() > 1e-10 * (1.0 + spec.r * spec.r) {
            return Err(Error::Domain(format!("μᵀΣ⁻¹μ = {r2} misses r² at φ = {phi}")));
        }
        let counts = (0..spec.draws)
            .into_par_iter()
            .map(|d| {
                let row = noise.row(d);
                let b = test.bundle(&[mu[0] + row[0], mu[1] + row[1]], &sigma)?;
                Ok([
                    (b.global < spec.alpha) as usize,
                    (b.minp < c_m) as usize,
                    (b.eminp < c_e) as usize,
                ])
            })
            .try_reduce(|| [0; 3], |a, b| Ok([a[0] + b[0], a[1] + b[1], a[2] + b[2]]))?;
        let names = [test.global.name(), "minp", "eminp"];
        for (name, hits) in names.iter().zip(counts) {
            let (power, se) = rate(hits, spec.draws);
            out.push(CurvePoint {
                phi,
                mu,
                test: name.to_string(),
                power,
                se,
            });
        }
        if let Some((power, se)) = noncentral {
            out.push(CurvePoint {
                phi,
                mu,
                test: "lr_noncentral".into(),
                power,
                se,
            });
        }
    }
    Ok(out)
}

/// Mean and correlation pattern of a dimension sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KSweepMode {
    /// `Σ = I`, `μ = (shift, 0, …, 0)`.
    IdentitySingle,
    /// `ρ_ij = rho`, `μ = (shift, …, shift)`.
    EquicorrAll { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepSpec {
    pub mode: KSweepMode,
    pub ks: Vec<usize>,
    pub shift: f64,
    pub alpha: f64,
    pub draws: usize,
    pub reference_draws: usize,
}

impl KSweepSpec {
    pub fn new(mode: KSweepMode, ks: Vec<usize>) -> Self {
        Self {
            mode,
            ks,
            shift: 3.0,
            alpha: 0.05,
            draws: 10_000,
            reference_draws: 10_000,
        }
    }
}

/// Global power and the rate of rejecting `H₁` for one test at one `k`.
/// `reject_h1` is `None` for the LR closure beyond the closed-testing limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub test: String,
    pub global_power: f64,
    pub global_se: f64,
    pub reject_h1: Option<f64>,
    pub reject_h1_se: Option<f64>,
}

impl KSweepRow {
    pub const CSV_HEADER: &'static str = "k,test,global_power,global_se,reject_h1,reject_h1_se";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{},{:.6},{:.6},{},{}",
            self.k,
            self.test,
            self.global_power,
            self.global_se,
            opt(self.reject_h1),
            opt(self.reject_h1_se)
        )
    }
}

/// Global and multiple-testing power of EMinP (stepdown), LR (global test
/// and its closure) and MinP (stepdown) as the number of hypotheses grows.
pub fn k_sweep(spec: &KSweepSpec, stream: RngStream) -> Result<Vec<KSweepRow>> {
    if spec.ks.is_empty() || spec.ks.contains(&0) {
        return Err(Error::InvalidParameter("k grid must be nonempty with k ≥ 1".into()));
    }
    if spec.draws < 100 || !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::InvalidParameter("need alpha in (0, 1) and at least 100 draws".into()));
    }
    let mut out = Vec::new();
    for (j, &k) in spec.ks.iter().enumerate() {
        let ks = stream.substream(j as u64);
        let (sigma, mu) = match spec.mode {
            KSweepMode::IdentitySingle => {
                let mut mu = vec![0.0; k];
                mu[0] = spec.shift;
                (CovarianceModel::identity(k)?, mu)
            }
            KSweepMode::EquicorrAll { rho } => (CovarianceModel::equicorrelation(rho, k)?, vec![spec.shift; k]),
        };
        let test = TestSpec::from_global(GlobalTestKind::LrChisq);
        let reference = known_sigma_reference(&sigma, &test, spec.reference_draws, ks.substream(0))?;
        let closed = if k <= MAX_CLOSED_K {
            Some(KnownSigmaSubsets::new(&sigma, &GlobalTestKind::LrChisq, ks.substream(1))?)
        } else {
            None
        };
        let noise = mvn_sample(&sigma, spec.draws, ks.substream(2))?;
        let counts = (0..spec.draws)
            .into_par_iter()
            .map(|d| {
                let x: Vec<f64> = noise.row(d).iter().zip(&mu).map(|(a, b)| a + b).collect();
                let b = test.bundle(&x, &sigma)?;
                let mut c = [0usize; 6];
                for (slot, kind) in [(0, ProcedureKind::EminpE1), (4, ProcedureKind::MinpStepdown)] {
                    let rep = run_procedure(&kind, &b, Some(&reference), spec.alpha, false, ks)?;
                    c[slot] = rep.reject_global as usize;
                    c[slot + 1] = rep.rejected.contains(&0) as usize;
                }
                c[2] = (b.global < spec.alpha) as usize;
                if let Some(s) = &closed {
                    c[3] = run_closed(&s.with_stats(&x)?, spec.alpha)?.rejected.contains(&0) as usize;
                }
                Ok(c)
            })
            .try_reduce(
                || [0; 6],
                |a, b| Ok(std::array::from_fn(|i| a[i] + b[i])),
            )?;
        for (t, name) in ["eminp", "lr", "minp"].iter().enumerate() {
            let (g, gse) = rate(counts[2 * t], spec.draws);
            let (h, hse) = rate(counts[2 * t + 1], spec.draws);
            let h1_known = *name != "lr" || closed.is_some();
            out.push(KSweepRow {
                k,
                test: name.to_string(),
                global_power: g,
                global_se: gse,
                reject_h1: h1_known.then_some(h),
                reject_h1_se: h1_known.then_some(hse),
            });
        }
    }
    Ok(out)
}

/// Global test that is chosen alongside MinP after seeing the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnoopVariant {
    /// LR test `XᵀΣ⁻¹X > F⁻¹_{χ²₂}(1−α)`.
    LrUnionMinp,
    /// Sum test `|X₁ + X₂| > √(2(1+ρ)) Φ⁻¹(1−α/2)`.
    SumUnionMinp,
    /// LR region written as `X₁² + X₂² + 2ρX₁X₂ > F⁻¹_{χ²₂}(1−α)`, which is
    /// not the `χ²₂` statistic when `ρ ≠ 0`.
    LrAsPrintedUnionMinp,
}

impl SnoopVariant {
    pub fn name(self) -> &'static str {
        match self {
            SnoopVariant::LrUnionMinp => "lr_union_minp",
            SnoopVariant::SumUnionMinp => "sum_union_minp",
            SnoopVariant::LrAsPrintedUnionMinp => "lr_as_printed_union_minp",
        }
    }
}

/// Null rejection rates of the two regions and of their union.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnoopResult {
    pub size: f64,
    pub se: f64,
    pub global_size: f64,
    pub minp_size: f64,
    /// MinP cutoff `c_m(α)` on the individual two-sided p-values.
    pub minp_cutoff: f64,
}

/// `P₀(X ∈ S_g(α) ∪ S_m(α))` for `k = 2` with known correlation `rho`.
/// `c_m(α)` is estimated from null draws separate from the ones used for
/// the size.
pub fn snoop_detail(rho: f64, alpha: f64, variant: SnoopVariant, draws: usize, stream: RngStream) -> Result<SnoopResult> {
    if !(alpha > 0.0 && alpha < 1.0) || draws < 100 {
        return Err(Error::InvalidParameter("need alpha in (0, 1) and at least 100 draws".into()));
    }
    let sigma = CovarianceModel::equicorrelation(rho, 2)?;
    let minp = |x: &[f64]| p_indiv_two_sided(x[0]).min(p_indiv_two_sided(x[1]));
    let calib = mvn_sample(&sigma, draws, stream.substream(0))?;
    let mut mins: Vec<f64> = (0..draws).map(|d| minp(calib.row(d))).collect();
    mins.sort_by(f64::total_cmp);
    let c_m = crate::resample::lower_quantile(&mins, alpha, false);

    let q = chisq_quantile(1.0 - alpha, 2)?;
    let sum_cut = (2.0 * (1.0 + rho)).sqrt() * std_normal_quantile(1.0 - alpha / 2.0)?;
    let in_global = |x: &[f64]| -> Result<bool> {
        Ok(match variant {
            SnoopVariant::LrUnionMinp => chisq_sf(quad_form(x, &sigma)?, 2) < alpha,
            SnoopVariant::SumUnionMinp => (x[0] + x[1]).abs() > sum_cut,
            SnoopVariant::LrAsPrintedUnionMinp => x[0] * x[0] + x[1] * x[1] + 2.0 * rho * x[0] * x[1] > q,
        })
    };
    let sample = mvn_sample(&sigma, draws, stream.substream(1))?;
    let (mut g, mut m, mut u) = (0usize, 0usize, 0usize);
    for d in 0..draws {
        let x = sample.row(d);
        let a = in_global(x)?;
        let b = minp(x) < c_m;
        g += a as usize;
        m += b as usize;
        u += (a || b) as usize;
    }
    let (size, se) = rate(u, draws);
    Ok(SnoopResult {
        size,
        se,
        global_size: g as f64 / draws as f64,
        minp_size: m as f64 / draws as f64,
        minp_cutoff: c_m,
    })
}

/// Size of the union of the global-test and MinP rejection regions.
pub fn snoop_size(rho: f64, alpha: f64, variant: SnoopVariant, draws: usize, stream: RngStream) -> Result<f64> {
    Ok(snoop_detail(rho, alpha, variant, draws, stream)?.size)
}
