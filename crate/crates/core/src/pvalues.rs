//! Individual and global p-values for a standardized mean vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::dist::{chisq_sf, std_normal_cdf, std_normal_sf};
use crate::numcore::linalg::{dot, Matrix};
use crate::numcore::{CovarianceModel, RngStream};
use crate::orthant::{chi_bar_pvalue, chi_bar_weights, ChiBarWeights, OrthantProjector, DEFAULT_WEIGHT_DRAWS};

/// Smallest per-coordinate variance accepted by [`studentize`].
pub const MIN_VARIANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    OneSided,
}

/// `2Φ(−|z|)`.
pub fn p_indiv_two_sided(z: f64) -> f64 {
    (2.0 * std_normal_cdf(-z.abs())).min(1.0)
}

/// `Φ(−z)`, rejecting for large positive `z`.
pub fn p_indiv_one_sided(z: f64) -> f64 {
    std_normal_sf(z)
}

pub fn p_indiv(z: f64, sided: Sidedness) -> f64 {
    match sided {
        Sidedness::TwoSided => p_indiv_two_sided(z),
        Sidedness::OneSided => p_indiv_one_sided(z),
    }
}

/// The test applied to the intersection hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalTestKind {
    /// `1 − F_{χ²_k}(XᵀΣ⁻¹X)`.
    LrChisq,
    /// `Φ(−bᵀΣ⁻¹X / √(bᵀΣ⁻¹b))`; `None` uses [`default_joint_t_direction`].
    JointT { direction: Option<Vec<f64>> },
    /// `2Φ(−|𝟙ᵀX| / √(𝟙ᵀΣ𝟙))`.
    Sum,
    /// One-sided likelihood ratio with chi-bar-square reference. Weights
    /// must be filled in (see [`GlobalTestKind::resolve`]) before use.
    ChiBar { weights: Option<ChiBarWeights> },
    /// Two-sample Hotelling form; on standardized differences it is the
    /// chi-square LR test.
    HotellingTwoSample,
}

impl GlobalTestKind {
    pub fn joint_t() -> Self {
        GlobalTestKind::JointT { direction: None }
    }

    pub fn chi_bar() -> Self {
        GlobalTestKind::ChiBar { weights: None }
    }

    /// The sidedness of the individual tests this global test pairs with.
    pub fn sidedness(&self) -> Sidedness {
        match self {
            GlobalTestKind::JointT { .. } | GlobalTestKind::ChiBar { .. } => Sidedness::OneSided,
            _ => Sidedness::TwoSided,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GlobalTestKind::LrChisq => "lr_chisq",
            GlobalTestKind::JointT { .. } => "joint_t",
            GlobalTestKind::Sum => "sum",
            GlobalTestKind::ChiBar { .. } => "chi_bar",
            GlobalTestKind::HotellingTwoSample => "hotelling_two_sample",
        }
    }

    /// Fills in chi-bar weights for `sigma` by Monte Carlo if they are
    /// missing; other kinds are returned unchanged.
    pub fn resolve(&self, sigma: &CovarianceModel, stream: RngStream) -> Result<Self> {
        match self {
            GlobalTestKind::ChiBar { weights: None } => Ok(GlobalTestKind::ChiBar {
                weights: Some(chi_bar_weights(sigma, DEFAULT_WEIGHT_DRAWS, stream)?),
            }),
            GlobalTestKind::ChiBar { weights: Some(w) } if w.dim() != sigma.dim() => {
                Err(Error::DimensionMismatch {
                    expected: sigma.dim(),
                    got: w.dim(),
                })
            }
            other => Ok(other.clone()),
        }
    }
}

/// `b = Σ𝟙 / √(𝟙ᵀΣ𝟙)`, for which `bᵀΣ⁻¹X = 𝟙ᵀX / √(𝟙ᵀΣ𝟙)`.
pub fn default_joint_t_direction(sigma: &CovarianceModel) -> Vec<f64> {
    let k = sigma.dim();
    let s1 = sigma.matrix().mul_vec(&vec![1.0; k]);
    let norm = s1.iter().sum::<f64>().sqrt();
    s1.into_iter().map(|v| v / norm).collect()
}

fn sum_statistic(x: &[f64], sigma: &CovarianceModel) -> f64 {
    let total: f64 = sigma.matrix().as_slice().iter().sum();
    x.iter().sum::<f64>() / total.sqrt()
}

fn joint_t_statistic(x: &[f64], sigma: &CovarianceModel, direction: Option<&[f64]>) -> Result<f64> {
    match direction {
        None => Ok(sum_statistic(x, sigma)),
        Some(b) => {
            sigma.check_dim(b.len())?;
            let qb = sigma.solve(b);
            let scale = dot(b, &qb);
            if !(scale > 0.0) {
                return Err(Error::InvalidParameter("joint-t direction must be nonzero".into()));
            }
            Ok(dot(&qb, x) / scale.sqrt())
        }
    }
}

/// Global p-value of `X` under `N(0, Σ)`.
pub fn p_global(x: &[f64], sigma: &CovarianceModel, kind: &GlobalTestKind) -> Result<f64> {
    sigma.check_dim(x.len())?;
    match kind {
        GlobalTestKind::LrChisq | GlobalTestKind::HotellingTwoSample => {
            Ok(chisq_sf(sigma.quad_form(x)?, x.len()))
        }
        GlobalTestKind::Sum => Ok(p_indiv_two_sided(sum_statistic(x, sigma))),
        GlobalTestKind::JointT { direction } => {
            Ok(p_indiv_one_sided(joint_t_statistic(x, sigma, direction.as_deref())?))
        }
        GlobalTestKind::ChiBar { weights } => {
            let w = weights
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("chi-bar weights have not been computed".into()))?;
            if w.dim() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    got: w.dim(),
                });
            }
            let stat = OrthantProjector::new(sigma).chi_bar_stat(x)?;
            chi_bar_pvalue(stat, w)
        }
    }
}

/// Individual, global, MinP and EMinP p-values for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueBundle {
    pub individual: Vec<f64>,
    pub global: f64,
    pub minp: f64,
    pub eminp: f64,
}

impl PValueBundle {
    pub fn new(individual: Vec<f64>, global: f64) -> Result<Self> {
        if individual.is_empty() {
            return Err(Error::EmptySubset);
        }
        if individual.iter().chain(std::iter::once(&global)).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("p-values must lie in [0, 1]".into()));
        }
        let minp = individual.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            individual,
            global,
            minp,
            eminp: global.min(minp),
        })
    }

    pub fn k(&self) -> usize {
        self.individual.len()
    }
}

/// A global test together with the sidedness of the individual tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub global: GlobalTestKind,
    pub sided: Sidedness,
}

impl TestSpec {
    pub fn new(global: GlobalTestKind, sided: Sidedness) -> Self {
        Self { global, sided }
    }

    /// Pairs the global test with its natural sidedness.
    pub fn from_global(global: GlobalTestKind) -> Self {
        let sided = global.sidedness();
        Self { global, sided }
    }

    pub fn bundle(&self, x: &[f64], sigma: &CovarianceModel) -> Result<PValueBundle> {
        let individual = x.iter().map(|&z| p_indiv(z, self.sided)).collect();
        PValueBundle::new(individual, p_global(x, sigma, &self.global)?)
    }
}

/// Per-coordinate studentized mean and sample correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct Studentized {
    /// `√n · X̄_i / σ̂_i`.
    pub scaled_mean: Vec<f64>,
    pub correlation: CovarianceModel,
}

pub fn studentize(sample: &Matrix) -> Result<Studentized> {
    let n = sample.rows();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("need at least 2 rows, got {n}")));
    }
    let mean = sample.column_means();
    let cov = sample.sample_covariance();
    studentize_moments(&mean, &cov, n)
}

pub(crate) fn studentize_moments(mean: &[f64], cov: &Matrix, n: usize) -> Result<Studentized> {
    let k = mean.len();
    if let Some(i) = (0..k).find(|&i| !(cov[(i, i)] >= MIN_VARIANCE)) {
        return Err(Error::DegenerateSample(format!("coordinate {i} is constant")));
    }
    let root_n = (n as f64).sqrt();
    let scaled_mean = (0..k).map(|i| root_n * mean[i] / cov[(i, i)].sqrt()).collect();
    let correlation = CovarianceModel::from_covariance(cov).map_err(singular_as_degenerate)?;
    Ok(Studentized {
        scaled_mean,
        correlation,
    })
}

fn singular_as_degenerate(e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite { .. } => Error::DegenerateSample("sample correlation matrix is singular".into()),
        other => other,
    }
}

/// Two independent samples over the same `k` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleData {
    group1: Matrix,
    group2: Matrix,
}

impl TwoSampleData {
    pub fn new(group1: Matrix, group2: Matrix) -> Result<Self> {
        if group1.cols() != group2.cols() {
            return Err(Error::DimensionMismatch {
                expected: group1.cols(),
                got: group2.cols(),
            });
        }
        if group1.cols() == 0 {
            return Err(Error::InvalidParameter("samples need at least one coordinate".into()));
        }
        if group1.rows() < 2 || group2.rows() < 2 {
            return Err(Error::DegenerateSample("each group needs at least 2 rows".into()));
        }
        Ok(Self { group1, group2 })
    }

    pub fn group1(&self) -> &Matrix {
        &self.group1
    }

    pub fn group2(&self) -> &Matrix {
        &self.group2
    }

    pub fn k(&self) -> usize {
        self.group1.cols()
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.group1.rows(), self.group2.rows())
    }

    /// Both groups stacked, group 1 first.
    pub fn pooled(&self) -> Matrix {
        let mut data = self.group1.as_slice().to_vec();
        data.extend_from_slice(self.group2.as_slice());
        Matrix::from_vec(self.group1.rows() + self.group2.rows(), self.k(), data)
            .expect("shapes agree by construction")
    }
}

/// Two-sample mean comparison with the first group's size as normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotellingResult {
    /// `n₁ DᵀΣ̂⁻¹D` with `Σ̂ = Σ̂₁ + (n₁/n₂) Σ̂₂`.
    pub t_g: f64,
    /// `√n₁ |D_i| / √Σ̂_ii`.
    pub individual_stats: Vec<f64>,
    /// `√n₁ D_i / √Σ̂_ii`, sign kept.
    pub signed_stats: Vec<f64>,
    /// `D = X̄₁ − X̄₂`.
    pub differences: Vec<f64>,
    /// `√(Σ̂_ii / n₁)`, the standard error of `D_i`.
    pub std_errors: Vec<f64>,
    #[serde(skip)]
    pub correlation: Option<CovarianceModel>,
}

pub fn hotelling_two_sample(data: &TwoSampleData) -> Result<HotellingResult> {
    let (n1, n2) = data.sizes();
    let m1 = data.group1.column_means();
    let m2 = data.group2.column_means();
    let c1 = data.group1.sample_covariance();
    let c2 = data.group2.sample_covariance();
    let ratio = n1 as f64 / n2 as f64;
    let k = data.k();
    let cov = Matrix::from_fn(k, k, |i, j| c1[(i, j)] + ratio * c2[(i, j)]);
    let diff: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a - b).collect();
    let st = studentize_moments(&diff, &cov, n1)?;
    let t_g = st.correlation.quad_form(&st.scaled_mean)?;
    let std_errors = (0..k).map(|i| (cov[(i, i)] / n1 as f64).sqrt()).collect();
    Ok(HotellingResult {
        t_g,
        individual_stats: st.scaled_mean.iter().map(|v| v.abs()).collect(),
        signed_stats: st.scaled_mean,
        differences: diff,
        std_errors,
        correlation: Some(st.correlation),
    })
}
