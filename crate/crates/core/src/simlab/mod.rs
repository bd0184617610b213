//! Monte Carlo studies: size, power, FWER and ANCR of the procedures over
//! simulated designs, power curves, dimension sweeps and the size of
//! data-snooping unions.

mod curves;
mod tables;

pub use curves::*;
pub use tables::*;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::fill_standard_normal;
use crate::numcore::{mvn_sample, CorrelationSpec, CovarianceModel, RngStream};
use crate::procedures::{run_closed, run_procedure, DecisionReport, KnownSigmaSubsets, ProcedureKind};
use crate::pvalues::{GlobalTestKind, TestSpec};
use crate::resample::{gen_reference, ReferenceDistribution, ReferenceInput, ResampleMethod, ResamplingPlan};

pub const MIN_REPS: usize = 100;

/// One simulation setting: data `N(c·𝟙_{k,m}, Σ)` with `n` rows, or a single
/// standardized vector with known `Σ` when `n` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub label: String,
    pub k: usize,
    pub n: Option<usize>,
    /// Mean scale `c`.
    pub scale: f64,
    /// Number of leading coordinates with nonzero mean.
    pub m: usize,
    pub correlation: CorrelationSpec,
    pub reps: usize,
    pub alpha: f64,
    pub plan: ResamplingPlan,
    pub procedures: Vec<ProcedureKind>,
    pub global_kind: GlobalTestKind,
    #[serde(default)]
    pub bonferroni_tail: bool,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m > self.k {
            return Err(Error::InvalidParameter(format!("need 0 ≤ m ≤ k with k ≥ 1, got m={} k={}", self.m, self.k)));
        }
        if self.reps < MIN_REPS {
            return Err(Error::InvalidParameter(format!("reps must be at least {MIN_REPS}")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("alpha must lie in (0, 1)".into()));
        }
        if let Some(n) = self.n {
            if n <= self.k {
                return Err(Error::InvalidParameter("sample size must exceed k".into()));
            }
            if self.plan.method == ResampleMethod::Permutation {
                return Err(Error::IncompatiblePlan("simulated designs are one-sample".into()));
            }
        } else if self.plan.method != ResampleMethod::ParametricMc {
            return Err(Error::IncompatiblePlan("known-Σ designs use parametric Monte Carlo".into()));
        }
        if self.procedures.is_empty() {
            return Err(Error::InvalidParameter("no procedures to evaluate".into()));
        }
        self.plan.validate()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.k).map(|i| if i < self.m { self.scale } else { 0.0 }).collect()
    }
}

/// Rates for one procedure. Rates are percentages; ANCR is a count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureRates {
    pub procedure: String,
    pub global_rate: f64,
    pub global_se: f64,
    pub fwer: f64,
    pub fwer_se: f64,
    pub ancr: f64,
    pub ancr_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub design: SimDesign,
    pub seed: u64,
    pub rows: Vec<ProcedureRates>,
}

impl SimReport {
    pub fn rates(&self, procedure: &ProcedureKind) -> Option<&ProcedureRates> {
        let name = procedure.name();
        self.rows.iter().find(|r| r.procedure == name)
    }

    pub const CSV_HEADER: &'static str =
        "design,k,n,m,scale,correlation,method,procedure,global_rate,global_se,fwer,fwer_se,ancr,ancr_se";

    /// One CSV line per procedure, without the header.
    pub fn csv_rows(&self) -> Vec<String> {
        let d = &self.design;
        let n = d.n.map_or("known".to_string(), |n| n.to_string());
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6}",
                    d.label,
                    d.k,
                    n,
                    d.m,
                    d.scale,
                    d.correlation.label(),
                    d.plan.method.name(),
                    r.procedure,
                    r.global_rate,
                    r.global_se,
                    r.fwer,
                    r.fwer_se,
                    r.ancr,
                    r.ancr_se
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    global: bool,
    false_rejections: usize,
    correct_rejections: usize,
}

fn outcome(report: &DecisionReport, m: usize) -> Outcome {
    Outcome {
        global: report.reject_global,
        false_rejections: report.rejected.iter().filter(|&&i| i >= m).count(),
        correct_rejections: report.rejected.iter().filter(|&&i| i < m).count(),
    }
}

/// A fresh 64-bit seed drawn from `stream`.
pub(crate) fn derive_seed(stream: RngStream) -> u64 {
    stream.rng().random()
}

/// Estimates global rejection rate, FWER and ANCR for every procedure in
/// the design. Replications run in parallel on their own substreams; all
/// procedures see the same data in each replication.
pub fn run_design(design: &SimDesign, stream: RngStream) -> Result<SimReport> {
    design.validate()?;
    let sigma = design.correlation.realize(design.k)?;
    let mu = design.mean();
    let outcomes: Vec<Vec<Outcome>> = match design.n {
        Some(n) => (0..design.reps)
            .into_par_iter()
            .map(|r| sample_replication(design, &sigma, &mu, n, stream.substream(r as u64)))
            .collect::<Result<_>>()?,
        None => known_sigma_outcomes(design, &sigma, &mu, stream)?,
    };
    let reps = design.reps as f64;
    let rows = design
        .procedures
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            let col: Vec<Outcome> = outcomes.iter().map(|o| o[j]).collect();
            let share = |f: &dyn Fn(&Outcome) -> bool| col.iter().filter(|o| f(o)).count() as f64 / reps;
            let g = share(&|o| o.global);
            let fw = share(&|o| o.false_rejections > 0);
            let counts: Vec<f64> = col.iter().map(|o| o.correct_rejections as f64).collect();
            let ancr = counts.iter().sum::<f64>() / reps;
            let var = counts.iter().map(|c| (c - ancr).powi(2)).sum::<f64>() / (reps - 1.0);
            ProcedureRates {
                procedure: kind.name(),
                global_rate: 100.0 * g,
                global_se: 100.0 * (g * (1.0 - g) / reps).sqrt(),
                fwer: 100.0 * fw,
                fwer_se: 100.0 * (fw * (1.0 - fw) / reps).sqrt(),
                ancr,
                ancr_se: (var / reps).sqrt(),
            }
        })
        .collect();
    Ok(SimReport {
        design: design.clone(),
        seed: stream.seed,
        rows,
    })
}

fn sample_replication(
    design: &SimDesign,
    sigma: &CovarianceModel,
    mu: &[f64],
    n: usize,
    stream: RngStream,
) -> Result<Vec<Outcome>> {
    let mut data = mvn_sample(sigma, n, stream.substream(0))?;
    for i in 0..n {
        for (v, m) in data.row_mut(i).iter_mut().zip(mu) {
            *v += m;
        }
    }
    let mut plan = design.plan.clone();
    plan.seed = derive_seed(stream.substream(1));
    let spec = TestSpec::from_global(design.global_kind.clone());
    let spec = match &spec.global {
        GlobalTestKind::ChiBar { weights: None } => {
            let st = crate::pvalues::studentize(&data)?;
            TestSpec::new(spec.global.resolve(&st.correlation, stream.substream(2))?, spec.sided)
        }
        _ => spec,
    };
    let reference = gen_reference(ReferenceInput::OneSample(&data), &spec, &plan)?;
    let bundle = reference.observed().expect("sample references carry the observed bundle").clone();
    design
        .procedures
        .iter()
        .map(|kind| {
            let report = run_procedure(
                kind,
                &bundle,
                Some(&reference),
                design.alpha,
                design.bonferroni_tail,
                stream.substream(3),
            )?;
            Ok(outcome(&report, design.m))
        })
        .collect()
}

fn known_sigma_outcomes(
    design: &SimDesign,
    sigma: &CovarianceModel,
    mu: &[f64],
    stream: RngStream,
) -> Result<Vec<Vec<Outcome>>> {
    let spec = TestSpec::from_global(design.global_kind.resolve(sigma, stream.substream(u64::MAX - 1))?);
    let mut plan = design.plan.clone();
    plan.seed = derive_seed(stream.substream(u64::MAX));
    let reference = gen_reference(ReferenceInput::Model(sigma), &spec, &plan)?;
    let closed: Vec<Option<KnownSigmaSubsets>> = design
        .procedures
        .iter()
        .map(|kind| match kind {
            ProcedureKind::Closed { global_kind } => {
                KnownSigmaSubsets::new(sigma, global_kind, stream.substream(u64::MAX - 2)).map(Some)
            }
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    (0..design.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.substream(r as u64).rng();
            let mut z = vec![0.0; design.k];
            fill_standard_normal(&mut rng, &mut z);
            let x: Vec<f64> = sigma.color(&z).iter().zip(mu).map(|(a, b)| a + b).collect();
            let bundle = spec.bundle(&x, sigma)?;
            design
                .procedures
                .iter()
                .zip(&closed)
                .map(|(kind, subsets)| {
                    let report = match subsets {
                        Some(s) => run_closed(&s.with_stats(&x)?, design.alpha)?,
                        None => run_procedure(
                            kind,
                            &bundle,
                            Some(&reference),
                            design.alpha,
                            design.bonferroni_tail,
                            stream.substream(r as u64),
                        )?,
                    };
                    Ok(outcome(&report, design.m))
                })
                .collect()
        })
        .collect()
}

/// Known-`Σ` reference for the given test family.
pub fn known_sigma_reference(
    sigma: &CovarianceModel,
    spec: &TestSpec,
    draws: usize,
    stream: RngStream,
) -> Result<ReferenceDistribution> {
    let plan = ResamplingPlan::new(ResampleMethod::ParametricMc, draws, derive_seed(stream));
    gen_reference(ReferenceInput::Model(sigma), spec, &plan)
}
