//! Projection onto the nonnegative orthant in the `Σ⁻¹` metric and the
//! chi-bar-square distribution of the one-sided likelihood ratio statistic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::dist::chisq_sf;
use crate::numcore::linalg::{cholesky, cholesky_solve, dot, Matrix};
use crate::numcore::rng::fill_standard_normal;
use crate::numcore::{CovarianceModel, RngStream};

/// Draws per parallel task when estimating mixing weights.
const WEIGHT_CHUNK: usize = 4096;

/// Smallest accepted draw count for [`chi_bar_weights`].
pub const MIN_WEIGHT_DRAWS: usize = 10_000;

/// Default draw count for mixing weights.
pub const DEFAULT_WEIGHT_DRAWS: usize = 100_000;

/// Minimizer of `(X − t)ᵀ Σ⁻¹ (X − t)` over `t ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub t_star: Vec<f64>,
    /// KKT multipliers `λ = 2 Σ⁻¹ (t − X)`, zero off the active set.
    pub multipliers: Vec<f64>,
    /// Indices with `t_star[i] = 0`, ascending.
    pub active_set: Vec<usize>,
    pub objective: f64,
}

impl ProjectionResult {
    /// Number of strictly positive coordinates of the minimizer.
    pub fn positive_count(&self) -> usize {
        self.t_star.iter().filter(|&&t| t > 0.0).count()
    }
}

/// Reusable solver for one `Σ`: holds `Q = Σ⁻¹` so repeated projections
/// skip the inversion.
#[derive(Debug, Clone)]
pub struct OrthantProjector {
    sigma: CovarianceModel,
    q: Matrix,
    q_scale: f64,
}

impl OrthantProjector {
    pub fn new(sigma: &CovarianceModel) -> Self {
        let q = sigma.inverse();
        let q_scale = q.max_abs();
        Self {
            sigma: sigma.clone(),
            q,
            q_scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn sigma(&self) -> &CovarianceModel {
        &self.sigma
    }

    /// Lawson–Hanson active set iteration on `min tᵀQt − 2cᵀt`, `c = QX`.
    pub fn project(&self, x: &[f64]) -> Result<ProjectionResult> {
        let k = self.dim();
        self.sigma.check_dim(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("projection input must be finite".into()));
        }
        if x.iter().all(|&v| v >= 0.0) {
            return Ok(ProjectionResult {
                t_star: x.to_vec(),
                multipliers: vec![0.0; k],
                active_set: (0..k).filter(|&i| x[i] == 0.0).collect(),
                objective: 0.0,
            });
        }

        let q = &self.q;
        let c = q.mul_vec(x);
        let x_scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * self.q_scale * x_scale.max(f64::MIN_POSITIVE);
        let max_pivots = 2usize << k.min(20);

        let t_floor = 1e-14 * x_scale;
        let mut t = vec![0.0; k];
        let mut free = vec![false; k];
        let mut pivots = 0usize;

        'outer: loop {
            let w = residual(q, &c, &t);
            let entering = (0..k)
                .filter(|&i| !free[i] && w[i] > tol)
                .max_by(|&a, &b| w[a].total_cmp(&w[b]));
            let Some(j) = entering else { break };
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::NonConvergence { pivots });
            }
            free[j] = true;

            let mut first = true;
            loop {
                let s = self.solve_free(&c, &free)?;
                if (0..k).all(|i| !free[i] || s[i] > 0.0) {
                    t = s;
                    break;
                }
                if first && s[j] <= 0.0 {
                    // A positive gradient that cannot move the entering
                    // coordinate is rounding noise: the current t is optimal.
                    free[j] = false;
                    break 'outer;
                }
                first = false;
                let mut alpha = f64::INFINITY;
                let mut blocking = j;
                for i in 0..k {
                    if free[i] && s[i] <= 0.0 {
                        let a = t[i] / (t[i] - s[i]);
                        if a < alpha {
                            alpha = a;
                            blocking = i;
                        }
                    }
                }
                for i in 0..k {
                    if free[i] {
                        t[i] += alpha * (s[i] - t[i]);
                    }
                }
                t[blocking] = 0.0;
                for i in 0..k {
                    if free[i] && t[i] <= t_floor {
                        free[i] = false;
                        t[i] = 0.0;
                    }
                }
                pivots += 1;
                if pivots > max_pivots {
                    return Err(Error::NonConvergence { pivots });
                }
                if !free.iter().any(|&f| f) {
                    break;
                }
            }
        }

        for i in 0..k {
            if !free[i] {
                t[i] = 0.0;
            }
        }
        let w = residual(q, &c, &t);
        let multipliers = (0..k)
            .map(|i| if free[i] { 0.0 } else { (-2.0 * w[i]).max(0.0) })
            .collect();
        let diff: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a - b).collect();
        let objective = self.sigma.quad_form(&diff)?;
        Ok(ProjectionResult {
            active_set: (0..k).filter(|&i| t[i] == 0.0).collect(),
            t_star: t,
            multipliers,
            objective,
        })
    }

    /// Solves `Q_PP s_P = c_P` on the free coordinates, zero elsewhere.
    fn solve_free(&self, c: &[f64], free: &[bool]) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
        let sub = self.q.principal_submatrix(&idx);
        let l = cholesky(&sub)?;
        let rhs: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
        let sol = cholesky_solve(&l, &rhs);
        let mut s = vec![0.0; free.len()];
        for (a, &i) in idx.iter().enumerate() {
            s[i] = sol[a];
        }
        Ok(s)
    }

    /// `XᵀΣ⁻¹X − min_{t≥0} (X−t)ᵀΣ⁻¹(X−t)`, evaluated as `t*ᵀ Σ⁻¹ t*`.
    pub fn chi_bar_stat(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        if p.t_star.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        self.sigma.quad_form(&p.t_star)
    }
}

fn residual(q: &Matrix, c: &[f64], t: &[f64]) -> Vec<f64> {
    (0..c.len()).map(|i| c[i] - dot(q.row(i), t)).collect()
}

pub fn project_nonneg_orthant(x: &[f64], sigma: &CovarianceModel) -> Result<ProjectionResult> {
    OrthantProjector::new(sigma).project(x)
}

pub fn chi_bar_stat(x: &[f64], sigma: &CovarianceModel) -> Result<f64> {
    OrthantProjector::new(sigma).chi_bar_stat(x)
}

/// Mixing weights `π(k, j, Σ)`, `j = 0..=k`, of the chi-bar-square law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBarWeights {
    pub weights: Vec<f64>,
    pub draws_used: usize,
    pub mc_std_errors: Vec<f64>,
}

impl ChiBarWeights {
    /// Weights given in closed form; they are renormalized to sum to one.
    pub fn exact(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidParameter("weights must lie in [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        let n = weights.len();
        Ok(Self {
            weights: weights.into_iter().map(|w| w / total).collect(),
            draws_used: 0,
            mc_std_errors: vec![0.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }
}

/// Monte Carlo weights: the share of `Z ~ N(0, Σ)` whose projection has
/// exactly `j` positive coordinates.
pub fn chi_bar_weights(sigma: &CovarianceModel, draws: usize, stream: RngStream) -> Result<ChiBarWeights> {
    if draws < MIN_WEIGHT_DRAWS {
        return Err(Error::InvalidParameter(format!(
            "chi-bar weights need at least {MIN_WEIGHT_DRAWS} draws, got {draws}"
        )));
    }
    let k = sigma.dim();
    let proj = OrthantProjector::new(sigma);
    let chunks = draws.div_ceil(WEIGHT_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|chunk| -> Result<Vec<u64>> {
            let mut rng = stream.substream(chunk as u64).rng();
            let n = WEIGHT_CHUNK.min(draws - chunk * WEIGHT_CHUNK);
            let mut z = vec![0.0; k];
            let mut counts = vec![0u64; k + 1];
            for _ in 0..n {
                fill_standard_normal(&mut rng, &mut z);
                let x = sigma.color(&z);
                counts[proj.project(&x)?.positive_count()] += 1;
            }
            Ok(counts)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(vec![0u64; k + 1], |mut acc, c| {
            acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            acc
        });
    let d = draws as f64;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / d).collect();
    let mc_std_errors = weights.iter().map(|w| (w * (1.0 - w) / d).sqrt()).collect();
    Ok(ChiBarWeights {
        weights,
        draws_used: draws,
        mc_std_errors,
    })
}

/// `P(χ̄² ≥ stat) = Σ_j π_j P(χ²_j ≥ stat)`, with `χ²_0` the point mass at 0.
pub fn chi_bar_pvalue(stat: f64, w: &ChiBarWeights) -> Result<f64> {
    if stat.is_nan() || stat < 0.0 {
        return Err(Error::Domain(format!("chi-bar statistic must be nonnegative, got {stat}")));
    }
    let p: f64 = w
        .weights
        .iter()
        .enumerate()
        .map(|(j, &wj)| wj * chisq_sf(stat, j))
        .sum();
    Ok(p.clamp(0.0, 1.0))
}
