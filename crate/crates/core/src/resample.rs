//! Reference distributions of the EMinP statistic and the critical values
//! and adjusted p-values derived from them.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::numcore::linalg::Matrix;
use crate::numcore::rng::fill_standard_normal;
use crate::numcore::{CovarianceModel, RngStream};
use crate::pvalues::{hotelling_two_sample, studentize, studentize_moments, PValueBundle, TestSpec, TwoSampleData};

pub const MIN_DRAWS: usize = 100;
pub const MAX_DRAWS: usize = 10_000_000;

/// Guards `ceil(αD)` against `αD` landing a rounding error above an integer.
const QUANTILE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    ParametricMc,
    Bootstrap,
    Permutation,
}

impl ResampleMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ResampleMethod::ParametricMc => "parametric_mc",
            ResampleMethod::Bootstrap => "bootstrap",
            ResampleMethod::Permutation => "permutation",
        }
    }
}

/// How the p-values inside each permutation draw are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InnerPValues {
    /// Rank of the plug-in p-value among all permutation draws and the
    /// observed sample.
    Rank,
    /// Plug-in normal and chi-square p-values.
    Asymptotic,
    /// Bootstrap p-values with `draws` resamples inside every permutation.
    NestedBootstrap { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplingPlan {
    pub method: ResampleMethod,
    pub draws: usize,
    pub seed: u64,
    pub center_bootstrap: bool,
    pub include_observed: bool,
    pub inner: InnerPValues,
}

impl ResamplingPlan {
    pub fn new(method: ResampleMethod, draws: usize, seed: u64) -> Self {
        Self {
            method,
            draws,
            seed,
            center_bootstrap: true,
            include_observed: method == ResampleMethod::Permutation,
            inner: InnerPValues::Rank,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_DRAWS..=MAX_DRAWS).contains(&self.draws) {
            return Err(Error::InvalidParameter(format!(
                "draws must lie in [{MIN_DRAWS}, {MAX_DRAWS}], got {}",
                self.draws
            )));
        }
        if let InnerPValues::NestedBootstrap { draws } = self.inner {
            if draws < 20 {
                return Err(Error::InvalidParameter("nested bootstrap needs at least 20 draws".into()));
            }
        }
        Ok(())
    }

    pub fn stream(&self) -> RngStream {
        RngStream::new(self.seed)
    }
}

/// What the reference world is generated from.
#[derive(Debug, Clone, Copy)]
pub enum ReferenceInput<'a> {
    /// Known correlation; parametric Monte Carlo only, no observed sample.
    Model(&'a CovarianceModel),
    OneSample(&'a Matrix),
    TwoSample(&'a TwoSampleData),
}

/// Standardized statistic vectors behind the draws, kept so that tests on
/// subsets of hypotheses can be recomputed on the same resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawVectors {
    /// `D × k` standardized statistics.
    pub stats: Matrix,
    /// Per-draw correlation matrices; `None` when every draw uses `common`.
    pub sigmas: Option<Vec<Matrix>>,
    pub common: CovarianceModel,
    pub observed_stats: Option<Vec<f64>>,
    pub observed_sigma: Option<CovarianceModel>,
    /// Whether per-hypothesis draws are ranks rather than plug-in p-values.
    pub ranked: bool,
}

impl DrawVectors {
    pub fn sigma_at(&self, d: usize) -> Option<&Matrix> {
        self.sigmas.as_ref().map(|s| &s[d])
    }
}

/// Null draws of `(p̂_g, p̂_1..p̂_k, p̂_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution {
    k: usize,
    include_observed: bool,
    global_draws: Vec<f64>,
    per_hypothesis: Matrix,
    eminp_sorted: Vec<f64>,
    minp_sorted: Vec<f64>,
    observed: Option<PValueBundle>,
    vectors: Option<DrawVectors>,
    subset_cache: SubsetCache,
}

/// Memo of sorted subset-minimum draws keyed by subset mask, shared by the
/// stepdown steps of every replication that reuses one reference.
#[derive(Debug, Default)]
struct SubsetCache(RwLock<HashMap<u64, Arc<Vec<f64>>>>);

/// Upper bound on cached floats across all subsets.
const SUBSET_CACHE_FLOATS: usize = 1 << 23;

impl Clone for SubsetCache {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl PartialEq for SubsetCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl ReferenceDistribution {
    /// Builds a reference from raw p-value draws.
    pub fn from_draws(global_draws: Vec<f64>, per_hypothesis: Matrix, include_observed: bool) -> Result<Self> {
        if global_draws.len() != per_hypothesis.rows() {
            return Err(Error::DimensionMismatch {
                expected: per_hypothesis.rows(),
                got: global_draws.len(),
            });
        }
        if global_draws.is_empty() || per_hypothesis.cols() == 0 {
            return Err(Error::InvalidParameter("reference needs at least one draw".into()));
        }
        if global_draws
            .iter()
            .chain(per_hypothesis.as_slice())
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Domain("reference p-values must lie in [0, 1]".into()));
        }
        let d = global_draws.len();
        let mut minp: Vec<f64> = (0..d)
            .map(|i| per_hypothesis.row(i).iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let mut eminp: Vec<f64> = minp.iter().zip(&global_draws).map(|(m, g)| m.min(*g)).collect();
        minp.sort_by(f64::total_cmp);
        eminp.sort_by(f64::total_cmp);
        Ok(Self {
            k: per_hypothesis.cols(),
            include_observed,
            global_draws,
            per_hypothesis,
            eminp_sorted: eminp,
            minp_sorted: minp,
            observed: None,
            vectors: None,
            subset_cache: SubsetCache::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn draws(&self) -> usize {
        self.global_draws.len()
    }

    pub fn include_observed(&self) -> bool {
        self.include_observed
    }

    /// Sorted `p̂_e(X^d)`.
    pub fn eminp_draws(&self) -> &[f64] {
        &self.eminp_sorted
    }

    /// Sorted `p̂_m(X^d)`.
    pub fn minp_draws(&self) -> &[f64] {
        &self.minp_sorted
    }

    pub fn global_draws(&self) -> &[f64] {
        &self.global_draws
    }

    pub fn per_hypothesis_draws(&self) -> &Matrix {
        &self.per_hypothesis
    }

    /// The observed bundle on the same p-value scale as the draws, when the
    /// reference was generated from data.
    pub fn observed(&self) -> Option<&PValueBundle> {
        self.observed.as_ref()
    }

    pub fn vectors(&self) -> Option<&DrawVectors> {
        self.vectors.as_ref()
    }

    /// `ĉ_e(α)`.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        lower_quantile(&self.eminp_sorted, alpha, self.include_observed)
    }

    /// `ĉ_m(α)`.
    pub fn minp_critical_value(&self, alpha: f64) -> f64 {
        lower_quantile(&self.minp_sorted, alpha, self.include_observed)
    }

    /// Draws of `min_{i∈K} p̂_i(X^d)`, sorted.
    pub fn subset_min_draws(&self, subset: &[usize]) -> Result<Vec<f64>> {
        Ok(self.subset_min_sorted(subset)?.to_vec())
    }

    fn subset_min_sorted(&self, subset: &[usize]) -> Result<Arc<Vec<f64>>> {
        self.check_subset(subset)?;
        let mask = (self.k <= 64).then(|| subset.iter().fold(0u64, |m, &i| m | 1 << i));
        if let Some(hit) = mask.and_then(|m| self.subset_cache.0.read().ok()?.get(&m).cloned()) {
            return Ok(hit);
        }
        let v = if subset.len() == self.k {
            self.minp_sorted.clone()
        } else {
            let mut v: Vec<f64> = (0..self.draws())
                .map(|d| {
                    let row = self.per_hypothesis.row(d);
                    subset.iter().map(|&i| row[i]).fold(f64::INFINITY, f64::min)
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let v = Arc::new(v);
        if let (Some(m), Ok(mut cache)) = (mask, self.subset_cache.0.write()) {
            if (cache.len() + 1) * self.draws() <= SUBSET_CACHE_FLOATS {
                cache.insert(m, v.clone());
            }
        }
        Ok(v)
    }

    /// `ĉ_{m,K}(α)`.
    pub fn subset_min_quantile(&self, subset: &[usize], alpha: f64) -> Result<f64> {
        Ok(lower_quantile(&self.subset_min_sorted(subset)?, alpha, self.include_observed))
    }

    /// Share of draws of `min_{i∈K} p̂_i` at or below `p`.
    pub fn subset_min_adjusted(&self, subset: &[usize], p: f64) -> Result<f64> {
        Ok(self.share_at_or_below(&self.subset_min_sorted(subset)?, p))
    }

    /// Share of `p̂_e` draws at or below `p`.
    pub fn eminp_adjusted(&self, p: f64) -> f64 {
        self.share_at_or_below(&self.eminp_sorted, p)
    }

    /// Share of `p̂_m` draws at or below `p`.
    pub fn minp_adjusted(&self, p: f64) -> f64 {
        self.share_at_or_below(&self.minp_sorted, p)
    }

    /// `#{d : v_d ≤ p} / D`, or `(count + 1) / (D + 1)` when the observed
    /// sample counts as a draw.
    pub fn share_at_or_below(&self, sorted: &[f64], p: f64) -> f64 {
        share_at_or_below(sorted, p, self.include_observed)
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() || subset.iter().any(|&i| i >= self.k) {
            return Err(Error::EmptySubset);
        }
        Ok(())
    }
}

pub fn share_at_or_below(sorted: &[f64], p: f64, include_observed: bool) -> f64 {
    let count = sorted.partition_point(|&v| v <= p);
    if include_observed {
        (count + 1) as f64 / (sorted.len() + 1) as f64
    } else {
        count as f64 / sorted.len() as f64
    }
}

/// Lower empirical α-quantile: the `⌈αD⌉`-th order statistic, so that
/// `p < ĉ` holds exactly when the share of draws at or below `p` is below
/// `α`. With the observed sample counted the rank is `⌈α(D+1)⌉ − 1`, and a
/// rank of zero gives a cutoff of 0 (nothing can be rejected).
pub fn lower_quantile(sorted: &[f64], alpha: f64, include_observed: bool) -> f64 {
    let d = sorted.len();
    let rank = if include_observed {
        ((alpha * (d + 1) as f64 - QUANTILE_SLACK).ceil() as usize).saturating_sub(1)
    } else {
        (alpha * d as f64 - QUANTILE_SLACK).ceil() as usize
    };
    if rank == 0 {
        0.0
    } else {
        sorted[rank.min(d) - 1]
    }
}

pub fn critical_value(reference: &ReferenceDistribution, alpha: f64) -> f64 {
    reference.critical_value(alpha)
}

pub fn subset_min_quantile(reference: &ReferenceDistribution, subset: &[usize], alpha: f64) -> Result<f64> {
    reference.subset_min_quantile(subset, alpha)
}

/// Adjusted p-values calibrated against the `p̂_e` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedPValues {
    pub global: f64,
    pub individual: Vec<f64>,
    pub eminp: f64,
}

pub fn adjust_pvalues(reference: &ReferenceDistribution, observed: &PValueBundle) -> Result<AdjustedPValues> {
    if observed.k() != reference.k() {
        return Err(Error::DimensionMismatch {
            expected: reference.k(),
            got: observed.k(),
        });
    }
    let global = reference.eminp_adjusted(observed.global);
    let individual: Vec<f64> = observed.individual.iter().map(|&p| reference.eminp_adjusted(p)).collect();
    let eminp = individual.iter().copied().fold(global, f64::min);
    Ok(AdjustedPValues {
        global,
        individual,
        eminp,
    })
}

struct Draw {
    stats: Vec<f64>,
    sigma: Option<Matrix>,
    bundle: PValueBundle,
}

/// Generates `D` null draws according to `plan`.
///
/// `spec.global` must already be resolved (chi-bar weights present); the
/// same weights are used for every draw.
pub fn gen_reference(input: ReferenceInput<'_>, spec: &TestSpec, plan: &ResamplingPlan) -> Result<ReferenceDistribution> {
    plan.validate()?;
    let stream = plan.stream();
    match (input, plan.method) {
        (ReferenceInput::Model(sigma), ResampleMethod::ParametricMc) => {
            let draws = parametric_draws(sigma, spec, plan.draws, stream)?;
            assemble(draws, sigma.clone(), None, false, plan.include_observed)
        }
        (ReferenceInput::Model(_), m) => Err(Error::IncompatiblePlan(format!(
            "{} needs sample data, not a correlation model",
            m.name()
        ))),
        (ReferenceInput::OneSample(sample), ResampleMethod::ParametricMc) => {
            let st = studentize(sample)?;
            let draws = parametric_draws(&st.correlation, spec, plan.draws, stream)?;
            let observed = Observed::new(st.scaled_mean, st.correlation.clone(), spec)?;
            assemble(draws, st.correlation, Some(observed), false, plan.include_observed)
        }
        (ReferenceInput::OneSample(sample), ResampleMethod::Bootstrap) => {
            let st = studentize(sample)?;
            let draws = one_sample_bootstrap(sample, spec, plan, stream)?;
            let observed = Observed::new(st.scaled_mean, st.correlation.clone(), spec)?;
            assemble(draws, st.correlation, Some(observed), false, plan.include_observed)
        }
        (ReferenceInput::OneSample(_), ResampleMethod::Permutation) => Err(Error::IncompatiblePlan(
            "permutation needs two-sample data".into(),
        )),
        (ReferenceInput::TwoSample(data), method) => {
            let canonical = canonical_two_sample(data)?;
            let h = hotelling_two_sample(&canonical)?;
            let corr = h.correlation.clone().expect("set by hotelling_two_sample");
            let observed = Observed::new(h.signed_stats, corr.clone(), spec)?;
            match method {
                ResampleMethod::ParametricMc => {
                    let draws = parametric_draws(&corr, spec, plan.draws, stream)?;
                    assemble(draws, corr, Some(observed), false, plan.include_observed)
                }
                ResampleMethod::Bootstrap => {
                    let draws = two_sample_bootstrap(&canonical, spec, plan.center_bootstrap, plan.draws, stream)?;
                    assemble(draws, corr, Some(observed), false, plan.include_observed)
                }
                ResampleMethod::Permutation => permutation_reference(&canonical, spec, plan, observed, corr),
            }
        }
    }
}

struct Observed {
    stats: Vec<f64>,
    sigma: CovarianceModel,
    bundle: PValueBundle,
}

impl Observed {
    fn new(stats: Vec<f64>, sigma: CovarianceModel, spec: &TestSpec) -> Result<Self> {
        let bundle = spec.bundle(&stats, &sigma)?;
        Ok(Self { stats, sigma, bundle })
    }
}

fn assemble(
    draws: Vec<Draw>,
    common: CovarianceModel,
    observed: Option<Observed>,
    ranked: bool,
    include_observed: bool,
) -> Result<ReferenceDistribution> {
    let k = common.dim();
    let d = draws.len();
    let mut global = Vec::with_capacity(d);
    let mut per = Vec::with_capacity(d * k);
    let mut stats = Vec::with_capacity(d * k);
    let mut sigmas = Vec::new();
    let per_draw_sigma = draws.first().is_some_and(|x| x.sigma.is_some());
    for draw in draws {
        global.push(draw.bundle.global);
        per.extend_from_slice(&draw.bundle.individual);
        stats.extend_from_slice(&draw.stats);
        if let Some(s) = draw.sigma {
            sigmas.push(s);
        }
    }
    let mut reference = ReferenceDistribution::from_draws(global, Matrix::from_vec(d, k, per)?, include_observed)?;
    let (observed_stats, observed_sigma, bundle) = match observed {
        Some(o) => (Some(o.stats), Some(o.sigma), Some(o.bundle)),
        None => (None, None, None),
    };
    reference.observed = bundle;
    reference.vectors = Some(DrawVectors {
        stats: Matrix::from_vec(d, k, stats)?,
        sigmas: per_draw_sigma.then_some(sigmas),
        common,
        observed_stats,
        observed_sigma,
        ranked,
    });
    Ok(reference)
}

fn parametric_draws(sigma: &CovarianceModel, spec: &TestSpec, draws: usize, stream: RngStream) -> Result<Vec<Draw>> {
    let k = sigma.dim();
    (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = stream.substream(d as u64).rng();
            let mut z = vec![0.0; k];
            fill_standard_normal(&mut rng, &mut z);
            let x = sigma.color(&z);
            let bundle = spec.bundle(&x, sigma)?;
            Ok(Draw {
                stats: x,
                sigma: None,
                bundle,
            })
        })
        .collect()
}

/// Mean vector and `(n−1)`-normalized covariance of the selected rows.
fn moments(data: &Matrix, rows: &[usize]) -> (Vec<f64>, Matrix) {
    let k = data.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; k];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix::zeros(k, k);
    for &r in rows {
        let row = data.row(r);
        for i in 0..k {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

fn resample_rows(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn studentized_draw(center: &[f64], mean: &[f64], cov: &Matrix, n: usize, spec: &TestSpec) -> Result<Draw> {
    let shifted: Vec<f64> = mean.iter().zip(center).map(|(m, c)| m - c).collect();
    let st = studentize_moments(&shifted, cov, n)?;
    let bundle = spec.bundle(&st.scaled_mean, &st.correlation)?;
    Ok(Draw {
        stats: st.scaled_mean,
        sigma: Some(st.correlation.matrix().clone()),
        bundle,
    })
}

/// A bootstrap resample with a constant coordinate or singular covariance
/// is replaced by the next resample from the same stream.
const MAX_BOOTSTRAP_ATTEMPTS: usize = 100;

fn redraw_degenerate(mut attempt: impl FnMut() -> Result<Draw>) -> Result<Draw> {
    let mut last = None;
    for _ in 0..MAX_BOOTSTRAP_ATTEMPTS {
        match attempt() {
            Err(e @ Error::DegenerateSample(_)) => last = Some(e),
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}

fn one_sample_bootstrap(sample: &Matrix, spec: &TestSpec, plan: &ResamplingPlan, stream: RngStream) -> Result<Vec<Draw>> {
    let n = sample.rows();
    let all: Vec<usize> = (0..n).collect();
    let (observed_mean, _) = moments(sample, &all);
    let center = if plan.center_bootstrap {
        observed_mean
    } else {
        vec![0.0; sample.cols()]
    };
    (0..plan.draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = stream.substream(d as u64).rng();
            redraw_degenerate(|| {
                let rows = resample_rows(n, &mut rng);
                let (mean, cov) = moments(sample, &rows);
                studentized_draw(&center, &mean, &cov, n, spec)
            })
        })
        .collect()
}

/// Difference of group means and the combined covariance
/// `Σ̂₁ + (n₁/n₂)Σ̂₂` for the given row selections of two matrices.
fn two_sample_moments(g1: &Matrix, rows1: &[usize], g2: &Matrix, rows2: &[usize]) -> (Vec<f64>, Matrix) {
    let (m1, c1) = moments(g1, rows1);
    let (m2, c2) = moments(g2, rows2);
    let ratio = rows1.len() as f64 / rows2.len() as f64;
    let k = g1.cols();
    let cov = Matrix::from_fn(k, k, |i, j| c1[(i, j)] + ratio * c2[(i, j)]);
    (m1.iter().zip(&m2).map(|(a, b)| a - b).collect(), cov)
}

fn two_sample_bootstrap(
    data: &TwoSampleData,
    spec: &TestSpec,
    center: bool,
    draws: usize,
    stream: RngStream,
) -> Result<Vec<Draw>> {
    let (n1, n2) = data.sizes();
    let all1: Vec<usize> = (0..n1).collect();
    let all2: Vec<usize> = (0..n2).collect();
    let (diff, _) = two_sample_moments(data.group1(), &all1, data.group2(), &all2);
    let center = if center { diff } else { vec![0.0; data.k()] };
    (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = stream.substream(d as u64).rng();
            redraw_degenerate(|| {
                let r1 = resample_rows(n1, &mut rng);
                let r2 = resample_rows(n2, &mut rng);
                let (mean, cov) = two_sample_moments(data.group1(), &r1, data.group2(), &r2);
                studentized_draw(&center, &mean, &cov, n1, spec)
            })
        })
        .collect()
}

fn sorted_rows(m: &Matrix) -> Matrix {
    let mut rows = m.to_rows();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Matrix::from_rows(&rows).expect("rows share a width")
}

/// Both groups with rows in a canonical order, so row order in the input
/// cannot influence any result.
fn canonical_two_sample(data: &TwoSampleData) -> Result<TwoSampleData> {
    TwoSampleData::new(sorted_rows(data.group1()), sorted_rows(data.group2()))
}

/// Plug-in draw for one relabelling of the pooled rows.
fn permutation_draw(pooled: &Matrix, n1: usize, order: &[usize], spec: &TestSpec) -> Result<Draw> {
    let (diff, cov) = two_sample_moments(pooled, &order[..n1], pooled, &order[n1..]);
    studentized_draw(&vec![0.0; diff.len()], &diff, &cov, n1, spec)
}

fn permutation_reference(
    data: &TwoSampleData,
    spec: &TestSpec,
    plan: &ResamplingPlan,
    observed: Observed,
    corr: CovarianceModel,
) -> Result<ReferenceDistribution> {
    let (n1, n2) = data.sizes();
    let pooled = sorted_rows(&data.pooled());
    let stream = plan.stream();
    let orders: Vec<Vec<usize>> = (0..plan.draws)
        .map(|d| {
            let mut rng = stream.substream(d as u64).rng();
            let mut order: Vec<usize> = (0..n1 + n2).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    let mut draws: Vec<Draw> = orders
        .par_iter()
        .map(|order| permutation_draw(&pooled, n1, order, spec))
        .collect::<Result<_>>()?;

    match plan.inner {
        InnerPValues::Asymptotic => assemble(draws, corr, Some(observed), false, plan.include_observed),
        InnerPValues::Rank => {
            let mut observed = observed;
            rank_transform(&mut draws, &mut observed.bundle)?;
            assemble(draws, corr, Some(observed), true, plan.include_observed)
        }
        InnerPValues::NestedBootstrap { draws: inner } => {
            let inner_stream = stream.substream(u64::MAX);
            let nested: Vec<PValueBundle> = orders
                .par_iter()
                .enumerate()
                .map(|(d, order)| {
                    let g1 = select_rows(&pooled, &order[..n1]);
                    let g2 = select_rows(&pooled, &order[n1..]);
                    let t = TwoSampleData::new(g1, g2)?;
                    bootstrap_pvalues(&t, spec, inner, inner_stream.substream(d as u64))
                })
                .collect::<Result<_>>()?;
            for (draw, b) in draws.iter_mut().zip(nested) {
                draw.bundle = b;
            }
            let mut observed = observed;
            observed.bundle = bootstrap_pvalues(data, spec, inner, inner_stream.substream(u64::MAX))?;
            assemble(draws, corr, Some(observed), true, plan.include_observed)
        }
    }
}

fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Matrix::from_vec(rows.len(), m.cols(), data).expect("row width preserved")
}

/// Bootstrap p-values for one two-sample dataset: each component is the
/// share of centered bootstrap plug-in p-values at or below the observed
/// plug-in p-value.
pub fn bootstrap_pvalues(data: &TwoSampleData, spec: &TestSpec, draws: usize, stream: RngStream) -> Result<PValueBundle> {
    let h = hotelling_two_sample(data)?;
    let corr = h.correlation.clone().expect("set by hotelling_two_sample");
    let observed = spec.bundle(&h.signed_stats, &corr)?;
    let boot = two_sample_bootstrap(data, spec, true, draws, stream)?;
    let k = data.k();
    let mut global: Vec<f64> = boot.iter().map(|b| b.bundle.global).collect();
    global.sort_by(f64::total_cmp);
    let individual = (0..k)
        .map(|i| {
            let mut v: Vec<f64> = boot.iter().map(|b| b.bundle.individual[i]).collect();
            v.sort_by(f64::total_cmp);
            share_at_or_below(&v, observed.individual[i], false)
        })
        .collect();
    PValueBundle::new(individual, share_at_or_below(&global, observed.global, false))
}

/// Replaces plug-in p-values by their rank among the draws and the observed
/// sample: `#{all values ≤ v} / (D + 1)`, computed per component.
fn rank_transform(draws: &mut [Draw], observed: &mut PValueBundle) -> Result<()> {
    let k = observed.k();
    let rank = |values: Vec<f64>, obs: f64| -> (Vec<f64>, f64) {
        let mut sorted = values.clone();
        sorted.push(obs);
        sorted.sort_by(f64::total_cmp);
        let total = sorted.len() as f64;
        let r = |v: f64| sorted.partition_point(|&s| s <= v) as f64 / total;
        (values.iter().map(|&v| r(v)).collect(), r(obs))
    };
    let (g, g_obs) = rank(draws.iter().map(|d| d.bundle.global).collect(), observed.global);
    let mut per: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut per_obs = Vec::with_capacity(k);
    for i in 0..k {
        let (v, o) = rank(draws.iter().map(|d| d.bundle.individual[i]).collect(), observed.individual[i]);
        per.push(v);
        per_obs.push(o);
    }
    for (d, draw) in draws.iter_mut().enumerate() {
        draw.bundle = PValueBundle::new((0..k).map(|i| per[i][d]).collect(), g[d])?;
    }
    *observed = PValueBundle::new(per_obs, g_obs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_reference() -> ReferenceDistribution {
        let g: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let per = Matrix::from_fn(100, 1, |_, _| 1.0);
        ReferenceDistribution::from_draws(g, per, false).unwrap()
    }

    #[test]
    fn grid_quantile() {
        assert_eq!(grid_reference().critical_value(0.05), 0.05);
    }

    #[test]
    fn constant_draws_quantile() {
        let per = Matrix::from_fn(200, 2, |_, _| 0.3);
        let r = ReferenceDistribution::from_draws(vec![0.3; 200], per, false).unwrap();
        assert_eq!(r.critical_value(0.05), 0.3);
        assert_eq!(r.minp_critical_value(0.5), 0.3);
    }

    #[test]
    fn counting_rule_with_observed() {
        let per = Matrix::from_fn(100, 1, |d, _| (d + 1) as f64 / 100.0);
        let r = ReferenceDistribution::from_draws(vec![1.0; 100], per, true).unwrap();
        assert_eq!(r.eminp_adjusted(1e-6), 1.0 / 101.0);
        assert_eq!(r.eminp_adjusted(1.0), 1.0);
    }

    #[test]
    fn observed_rank_zero_means_no_cutoff() {
        let per = Matrix::from_fn(100, 1, |d, _| (d + 1) as f64 / 100.0);
        let r = ReferenceDistribution::from_draws(vec![1.0; 100], per, true).unwrap();
        // α(D+1) = 1.01 rounds up to 2, so the first order statistic is used.
        assert_eq!(r.critical_value(0.01), 0.01);
        assert_eq!(r.critical_value(0.009), 0.0);
    }

    #[test]
    fn plan_compatibility() {
        let sigma = CovarianceModel::identity(2).unwrap();
        let spec = TestSpec::from_global(crate::pvalues::GlobalTestKind::LrChisq);
        let plan = ResamplingPlan::new(ResampleMethod::Bootstrap, 100, 1);
        assert!(matches!(
            gen_reference(ReferenceInput::Model(&sigma), &spec, &plan),
            Err(Error::IncompatiblePlan(_))
        ));
        let sample = Matrix::from_fn(10, 2, |i, j| (i * (j + 2)) as f64 % 7.0);
        let plan = ResamplingPlan::new(ResampleMethod::Permutation, 100, 1);
        assert!(matches!(
            gen_reference(ReferenceInput::OneSample(&sample), &spec, &plan),
            Err(Error::IncompatiblePlan(_))
        ));
        let plan = ResamplingPlan::new(ResampleMethod::ParametricMc, 99, 1);
        assert!(plan.validate().is_err());
    }

    #[test]
    fn subset_errors() {
        let r = grid_reference();
        assert!(matches!(r.subset_min_quantile(&[], 0.05), Err(Error::EmptySubset)));
        assert!(matches!(r.subset_min_quantile(&[3], 0.05), Err(Error::EmptySubset)));
    }
}
