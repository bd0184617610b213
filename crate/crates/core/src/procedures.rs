//! Global, stepdown and closed testing procedures.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{CovarianceModel, RngStream};
use crate::pvalues::{p_global, GlobalTestKind, PValueBundle};
use crate::resample::{share_at_or_below, ReferenceDistribution};

/// Largest family handled by closed testing.
pub const MAX_CLOSED_K: usize = 12;

/// Decision rules for the intersection and the individual hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcedureKind {
    /// `p̂_e < ĉ_e(α)` with the resampled cutoff.
    EminpE1,
    /// `p̂_e < α/(k+1)`.
    EminpE2,
    /// `p̂_g < α` and `p̂_m < ĉ_m(α)`.
    EminpE3,
    MinpSingle,
    MinpStepdown,
    /// Closure of the given global test over all subsets.
    Closed { global_kind: GlobalTestKind },
    /// Closure of subset MinP tests.
    ClosedMinp,
}

impl ProcedureKind {
    pub fn name(&self) -> String {
        match self {
            ProcedureKind::EminpE1 => "eminp_e1".into(),
            ProcedureKind::EminpE2 => "eminp_e2".into(),
            ProcedureKind::EminpE3 => "eminp_e3".into(),
            ProcedureKind::MinpSingle => "minp_single".into(),
            ProcedureKind::MinpStepdown => "minp_stepdown".into(),
            ProcedureKind::Closed { global_kind } => format!("closed_{}", global_kind.name()),
            ProcedureKind::ClosedMinp => "closed_minp".into(),
        }
    }

    pub fn is_eminp(&self) -> bool {
        matches!(self, ProcedureKind::EminpE1 | ProcedureKind::EminpE2 | ProcedureKind::EminpE3)
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, ProcedureKind::Closed { .. } | ProcedureKind::ClosedMinp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub hypothesis: usize,
    pub p_value: f64,
    pub cutoff: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub procedure: String,
    pub reject_global: bool,
    /// Rejected hypothesis indices, ascending.
    pub rejected: Vec<usize>,
    pub stepdown_trace: Vec<StepRecord>,
    /// Adjusted p-value of the intersection hypothesis.
    pub global_adjusted: Option<f64>,
    /// Per-hypothesis adjusted p-values, in original order.
    pub adjusted: Option<Vec<f64>>,
    /// Per-hypothesis closed p-values, in original order.
    pub closed: Option<Vec<f64>>,
    /// Cutoff used at each step; step 0 is the global test.
    pub critical_values: BTreeMap<usize, f64>,
}

impl DecisionReport {
    fn new(procedure: String, reject_global: bool) -> Self {
        Self {
            procedure,
            reject_global,
            rejected: Vec::new(),
            stepdown_trace: Vec::new(),
            global_adjusted: None,
            adjusted: None,
            closed: None,
            critical_values: BTreeMap::new(),
        }
    }

    pub fn is_coherent(&self) -> bool {
        self.rejected.is_empty() || self.reject_global
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn need<'a>(reference: Option<&'a ReferenceDistribution>, name: &'static str) -> Result<&'a ReferenceDistribution> {
    reference.ok_or(Error::MissingReference(name))
}

fn check_k(bundle: &PValueBundle, reference: Option<&ReferenceDistribution>) -> Result<()> {
    if let Some(r) = reference {
        if r.k() != bundle.k() {
            return Err(Error::DimensionMismatch {
                expected: r.k(),
                got: bundle.k(),
            });
        }
    }
    Ok(())
}

/// Indices sorted by ascending p-value, ties by ascending index.
pub fn ordering(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    idx
}

/// Global decision of an EMinP or MinP procedure.
pub fn run_global(
    bundle: &PValueBundle,
    reference: Option<&ReferenceDistribution>,
    kind: &ProcedureKind,
    alpha: f64,
) -> Result<bool> {
    check_alpha(alpha)?;
    check_k(bundle, reference)?;
    Ok(match kind {
        ProcedureKind::EminpE1 => bundle.eminp < need(reference, "eminp_e1")?.critical_value(alpha),
        ProcedureKind::EminpE2 => bundle.eminp < alpha / (bundle.k() + 1) as f64,
        ProcedureKind::EminpE3 => {
            bundle.global < alpha && bundle.minp < need(reference, "eminp_e3")?.minp_critical_value(alpha)
        }
        ProcedureKind::MinpSingle | ProcedureKind::MinpStepdown => {
            bundle.minp < need(reference, "minp")?.minp_critical_value(alpha)
        }
        ProcedureKind::Closed { .. } | ProcedureKind::ClosedMinp => {
            return Err(Error::InvalidParameter(
                "closed procedures decide the intersection through run_closed".into(),
            ))
        }
    })
}

/// Step-1 rule of a stepdown procedure: the cutoff for `p̂_(1)`, any extra
/// condition, and the adjusted p-value whose comparison with α is
/// equivalent.
struct FirstStep {
    cutoff: f64,
    extra: bool,
    adjusted: Option<f64>,
}

fn first_step(
    bundle: &PValueBundle,
    reference: Option<&ReferenceDistribution>,
    kind: &ProcedureKind,
    alpha: f64,
    p1: f64,
) -> Result<FirstStep> {
    let k = bundle.k() as f64;
    Ok(match kind {
        ProcedureKind::EminpE1 => {
            let r = need(reference, "eminp_e1")?;
            FirstStep {
                cutoff: r.critical_value(alpha),
                extra: true,
                adjusted: Some(r.eminp_adjusted(p1)),
            }
        }
        ProcedureKind::EminpE2 => FirstStep {
            cutoff: alpha / (k + 1.0),
            extra: true,
            adjusted: Some(((k + 1.0) * p1).min(1.0)),
        },
        ProcedureKind::EminpE3 => {
            let r = need(reference, "eminp_e3")?;
            FirstStep {
                cutoff: r.minp_critical_value(alpha),
                extra: bundle.global < alpha,
                adjusted: Some(r.minp_adjusted(p1).max(bundle.global)),
            }
        }
        ProcedureKind::MinpSingle | ProcedureKind::MinpStepdown => {
            let r = need(reference, "minp")?;
            FirstStep {
                cutoff: r.minp_critical_value(alpha),
                extra: true,
                adjusted: Some(r.minp_adjusted(p1)),
            }
        }
        _ => unreachable!("closed kinds are handled by run_closed"),
    })
}

fn stepdown(
    bundle: &PValueBundle,
    reference: Option<&ReferenceDistribution>,
    kind: &ProcedureKind,
    alpha: f64,
    bonferroni_tail: bool,
) -> Result<DecisionReport> {
    check_alpha(alpha)?;
    check_k(bundle, reference)?;
    let reject_global = run_global(bundle, reference, kind, alpha)?;
    let mut report = DecisionReport::new(kind.name(), reject_global);
    let order = ordering(&bundle.individual);
    let k = order.len();
    let mut adjusted = vec![1.0; k];
    let mut running = 0.0_f64;
    let mut stopped = false;

    for (step, &h) in order.iter().enumerate() {
        let p = bundle.individual[h];
        let (cutoff, extra, adj) = if step == 0 {
            let f = first_step(bundle, reference, kind, alpha, p)?;
            (f.cutoff, f.extra, f.adjusted)
        } else {
            let remaining = &order[step..];
            let size = remaining.len() as f64;
            if bonferroni_tail {
                (alpha / size, true, Some((size * p).min(1.0)))
            } else {
                let r = need(reference, "stepdown")?;
                (
                    r.subset_min_quantile(remaining, alpha)?,
                    true,
                    Some(r.subset_min_adjusted(remaining, p)?),
                )
            }
        };
        if let Some(a) = adj {
            running = running.max(a);
            adjusted[h] = running.min(1.0);
        }
        if stopped {
            continue;
        }
        let rejected = extra && p < cutoff;
        report.critical_values.insert(step + 1, cutoff);
        report.stepdown_trace.push(StepRecord {
            step: step + 1,
            hypothesis: h,
            p_value: p,
            cutoff,
            rejected,
        });
        if rejected {
            report.rejected.push(h);
        } else {
            stopped = true;
        }
    }
    report.rejected.sort_unstable();
    report.adjusted = Some(adjusted);
    let k1 = (k + 1) as f64;
    report.global_adjusted = match (kind, reference) {
        (ProcedureKind::EminpE2, _) => Some((k1 * bundle.eminp).min(1.0)),
        (ProcedureKind::EminpE1, Some(r)) => Some(r.eminp_adjusted(bundle.eminp)),
        (ProcedureKind::EminpE3, Some(r)) => Some(r.minp_adjusted(bundle.minp).max(bundle.global)),
        (_, Some(r)) => Some(r.minp_adjusted(bundle.minp)),
        (_, None) => None,
    };
    let global_cut = match (kind, reference) {
        (ProcedureKind::EminpE2, _) => Some(alpha / k1),
        (ProcedureKind::EminpE1, Some(r)) => Some(r.critical_value(alpha)),
        (_, Some(r)) => Some(r.minp_critical_value(alpha)),
        (_, None) => None,
    };
    if let Some(c) = global_cut {
        report.critical_values.insert(0, c);
    }
    Ok(report)
}

/// Stepdown EMinP procedure. Step 1 compares `p̂_(1)` with the procedure's
/// own cutoff (for `e3`, `ĉ_m(α)` together with `p̂_g < α`); later steps use
/// `ĉ_{m,K_i}(α)`, or `α/|K_i|` when `bonferroni_tail` is set.
pub fn run_stepdown(
    bundle: &PValueBundle,
    reference: Option<&ReferenceDistribution>,
    kind: &ProcedureKind,
    alpha: f64,
    bonferroni_tail: bool,
) -> Result<DecisionReport> {
    if !kind.is_eminp() {
        return Err(Error::InvalidParameter(format!(
            "run_stepdown takes an EMinP procedure, got {}",
            kind.name()
        )));
    }
    stepdown(bundle, reference, kind, alpha, bonferroni_tail)
}

/// MinP single-step (`{i : p̂_i < ĉ_m(α)}`) or stepdown procedure.
pub fn run_minp(
    bundle: &PValueBundle,
    reference: &ReferenceDistribution,
    alpha: f64,
    stepdown_mode: bool,
) -> Result<DecisionReport> {
    if stepdown_mode {
        return stepdown(bundle, Some(reference), &ProcedureKind::MinpStepdown, alpha, false);
    }
    check_alpha(alpha)?;
    check_k(bundle, Some(reference))?;
    let cutoff = reference.minp_critical_value(alpha);
    let mut report = DecisionReport::new(ProcedureKind::MinpSingle.name(), bundle.minp < cutoff);
    for (step, h) in ordering(&bundle.individual).into_iter().enumerate() {
        let p = bundle.individual[h];
        let rejected = p < cutoff;
        report.stepdown_trace.push(StepRecord {
            step: step + 1,
            hypothesis: h,
            p_value: p,
            cutoff,
            rejected,
        });
        if rejected {
            report.rejected.push(h);
        }
    }
    report.rejected.sort_unstable();
    report.adjusted = Some(bundle.individual.iter().map(|&p| reference.minp_adjusted(p)).collect());
    report.global_adjusted = Some(reference.minp_adjusted(bundle.minp));
    report.critical_values.insert(0, cutoff);
    report.critical_values.insert(1, cutoff);
    Ok(report)
}

/// Hypotheses with `p̂_i` below a single cutoff.
pub fn single_step_rejections(bundle: &PValueBundle, cutoff: f64) -> Vec<usize> {
    (0..bundle.k()).filter(|&i| bundle.individual[i] < cutoff).collect()
}

/// Runs any procedure. Closed kinds need a reference carrying draw vectors;
/// `stream` seeds chi-bar weights for subsets.
pub fn run_procedure(
    kind: &ProcedureKind,
    bundle: &PValueBundle,
    reference: Option<&ReferenceDistribution>,
    alpha: f64,
    bonferroni_tail: bool,
    stream: RngStream,
) -> Result<DecisionReport> {
    match kind {
        ProcedureKind::MinpSingle => run_minp(bundle, need(reference, "minp_single")?, alpha, false),
        ProcedureKind::MinpStepdown => run_minp(bundle, need(reference, "minp_stepdown")?, alpha, true),
        ProcedureKind::Closed { global_kind } => {
            let r = need(reference, "closed")?;
            run_closed(&CalibratedSubsetTest::new(r, global_kind.clone(), stream)?, alpha)
        }
        ProcedureKind::ClosedMinp => {
            let r = need(reference, "closed_minp")?;
            run_closed(&MinpSubsetTest::new(r, bundle)?, alpha)
        }
        _ => run_stepdown(bundle, reference, kind, alpha, bonferroni_tail),
    }
}

/// A test of the intersection hypothesis `H_J` for every nonempty `J`.
pub trait SubsetTest: Sync {
    fn k(&self) -> usize;
    fn name(&self) -> String;
    /// p-value for the subset encoded by bit mask `mask` (bit `i` ↔ `H_i`).
    fn pvalue(&self, mask: u32) -> Result<f64>;
}

pub fn mask_indices(mask: u32, k: usize) -> Vec<usize> {
    (0..k).filter(|&i| mask >> i & 1 == 1).collect()
}

/// Global test of the subset on the sub-vector and sub-correlation.
/// Joint-t directions and chi-bar weights are only kept for the full set;
/// proper subsets use the default direction and freshly estimated weights.
pub fn subset_kind(
    kind: &GlobalTestKind,
    sub_sigma: &CovarianceModel,
    full: bool,
    stream: RngStream,
) -> Result<GlobalTestKind> {
    match kind {
        GlobalTestKind::JointT { .. } if !full => Ok(GlobalTestKind::joint_t()),
        GlobalTestKind::ChiBar { weights } => {
            let keep = full && weights.as_ref().is_some_and(|w| w.dim() == sub_sigma.dim());
            if keep {
                Ok(kind.clone())
            } else {
                GlobalTestKind::chi_bar().resolve(sub_sigma, stream)
            }
        }
        other => Ok(other.clone()),
    }
}

/// Subset models and test kinds for a known correlation, built once and
/// reused for many statistic vectors.
pub struct KnownSigmaSubsets {
    k: usize,
    kind_name: &'static str,
    entries: Vec<(Vec<usize>, CovarianceModel, GlobalTestKind)>,
}

impl KnownSigmaSubsets {
    pub fn new(sigma: &CovarianceModel, kind: &GlobalTestKind, stream: RngStream) -> Result<Self> {
        let k = sigma.dim();
        if k > MAX_CLOSED_K {
            return Err(Error::TooManyHypotheses { k, max: MAX_CLOSED_K });
        }
        let entries = (1u32..1 << k)
            .into_par_iter()
            .map(|mask| {
                let idx = mask_indices(mask, k);
                let sub = sigma.sub_model(&idx)?;
                let kind = subset_kind(kind, &sub, idx.len() == k, stream.substream(mask as u64))?;
                Ok((idx, sub, kind))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k,
            kind_name: kind.name(),
            entries,
        })
    }

    pub fn with_stats<'a>(&'a self, stats: &'a [f64]) -> Result<PlugInSubsetTest<'a>> {
        if stats.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: stats.len(),
            });
        }
        Ok(PlugInSubsetTest { subsets: self, stats })
    }
}

/// Subset tests with known correlation and plug-in p-values, no resampling.
pub struct PlugInSubsetTest<'a> {
    subsets: &'a KnownSigmaSubsets,
    stats: &'a [f64],
}

impl SubsetTest for PlugInSubsetTest<'_> {
    fn k(&self) -> usize {
        self.subsets.k
    }

    fn name(&self) -> String {
        format!("closed_{}", self.subsets.kind_name)
    }

    fn pvalue(&self, mask: u32) -> Result<f64> {
        let (idx, sub, kind) = &self.subsets.entries[mask as usize - 1];
        let x: Vec<f64> = idx.iter().map(|&i| self.stats[i]).collect();
        p_global(&x, sub, kind)
    }
}

/// Subset global tests calibrated on the stored resamples of a reference:
/// `p_J` is the share of draws whose plug-in subset p-value is at or below
/// the observed one.
pub struct CalibratedSubsetTest<'a> {
    reference: &'a ReferenceDistribution,
    kind: GlobalTestKind,
    stream: RngStream,
}

impl<'a> CalibratedSubsetTest<'a> {
    pub fn new(reference: &'a ReferenceDistribution, kind: GlobalTestKind, stream: RngStream) -> Result<Self> {
        let v = reference
            .vectors()
            .ok_or_else(|| Error::InvalidParameter("reference carries no draw vectors".into()))?;
        if v.observed_stats.is_none() {
            return Err(Error::InvalidParameter("reference carries no observed sample".into()));
        }
        Ok(Self {
            reference,
            kind,
            stream,
        })
    }
}

impl SubsetTest for CalibratedSubsetTest<'_> {
    fn k(&self) -> usize {
        self.reference.k()
    }

    fn name(&self) -> String {
        format!("closed_{}", self.kind.name())
    }

    fn pvalue(&self, mask: u32) -> Result<f64> {
        let v = self.reference.vectors().expect("checked in new");
        let idx = mask_indices(mask, self.k());
        let full = idx.len() == self.k();
        let obs_sigma = v.observed_sigma.as_ref().unwrap_or(&v.common).sub_model(&idx)?;
        let kind = subset_kind(&self.kind, &obs_sigma, full, self.stream.substream(mask as u64))?;
        let pick = |row: &[f64]| idx.iter().map(|&i| row[i]).collect::<Vec<f64>>();
        let obs_x = pick(v.observed_stats.as_ref().expect("checked in new"));
        let observed = p_global(&obs_x, &obs_sigma, &kind)?;
        let common_sub = v.common.sub_model(&idx)?;
        let mut draws = (0..self.reference.draws())
            .map(|d| {
                let x = pick(v.stats.row(d));
                match v.sigma_at(d) {
                    Some(m) => {
                        let s = CovarianceModel::explicit(m.principal_submatrix(&idx))?;
                        p_global(&x, &s, &kind)
                    }
                    None => p_global(&x, &common_sub, &kind),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        draws.sort_by(f64::total_cmp);
        Ok(share_at_or_below(&draws, observed, self.reference.include_observed()))
    }
}

/// Subset MinP tests: `p_J` is the share of draws of `min_{i∈J} p̂_i` at or
/// below the observed `min_{i∈J} p̂_i`.
pub struct MinpSubsetTest<'a> {
    reference: &'a ReferenceDistribution,
    observed: Vec<f64>,
}

impl<'a> MinpSubsetTest<'a> {
    pub fn new(reference: &'a ReferenceDistribution, bundle: &PValueBundle) -> Result<Self> {
        check_k(bundle, Some(reference))?;
        Ok(Self {
            reference,
            observed: bundle.individual.clone(),
        })
    }
}

impl SubsetTest for MinpSubsetTest<'_> {
    fn k(&self) -> usize {
        self.reference.k()
    }

    fn name(&self) -> String {
        ProcedureKind::ClosedMinp.name()
    }

    fn pvalue(&self, mask: u32) -> Result<f64> {
        let idx = mask_indices(mask, self.k());
        let p = idx.iter().map(|&i| self.observed[i]).fold(f64::INFINITY, f64::min);
        self.reference.subset_min_adjusted(&idx, p)
    }
}

/// Closed p-values from the p-values of all `2^k − 1` intersection tests,
/// indexed by mask (entry 0 unused).
pub fn closure(subset_pvalues: &[f64], k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            (1u32..1 << k)
                .filter(|m| m >> i & 1 == 1)
                .map(|m| subset_pvalues[m as usize])
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Closed testing: `H_i` is rejected when every intersection containing it
/// is rejected at level α, i.e. when its closed p-value is below α.
pub fn run_closed(test: &dyn SubsetTest, alpha: f64) -> Result<DecisionReport> {
    check_alpha(alpha)?;
    let k = test.k();
    if k > MAX_CLOSED_K {
        return Err(Error::TooManyHypotheses { k, max: MAX_CLOSED_K });
    }
    let full = (1u32 << k) - 1;
    let mut pvalues = vec![f64::NAN];
    pvalues.extend((1..=full).into_par_iter().map(|m| test.pvalue(m)).collect::<Result<Vec<f64>>>()?);
    let closed = closure(&pvalues, k);
    let global = pvalues[full as usize];
    let mut report = DecisionReport::new(test.name(), global < alpha);
    for (step, h) in ordering(&closed).into_iter().enumerate() {
        let rejected = closed[h] < alpha;
        report.stepdown_trace.push(StepRecord {
            step: step + 1,
            hypothesis: h,
            p_value: closed[h],
            cutoff: alpha,
            rejected,
        });
        if rejected {
            report.rejected.push(h);
        }
    }
    report.rejected.sort_unstable();
    report.global_adjusted = Some(global);
    report.adjusted = Some(closed.clone());
    report.closed = Some(closed);
    report.critical_values.insert(0, alpha);
    Ok(report)
}
