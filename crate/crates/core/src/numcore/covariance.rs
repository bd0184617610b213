use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, cholesky_inverse, cholesky_solve, dot, solve_lower, Matrix};
use crate::error::{Error, Result};

/// Parameterization of a correlation structure over `k` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelationSpec {
    /// `ρ_ij = ρ` for `i ≠ j`.
    Equicorrelation { rho: f64 },
    /// `ρ_ij = a^|i−j|`.
    PowerDecay { a: f64 },
    /// A full correlation matrix, row-major.
    Explicit { values: Vec<Vec<f64>> },
}

impl CorrelationSpec {
    pub fn realize(&self, k: usize) -> Result<CovarianceModel> {
        match self {
            CorrelationSpec::Equicorrelation { rho } => CovarianceModel::equicorrelation(*rho, k),
            CorrelationSpec::PowerDecay { a } => CovarianceModel::power_decay(*a, k),
            CorrelationSpec::Explicit { values } => {
                let m = Matrix::from_rows(values)?;
                if m.rows() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: m.rows(),
                    });
                }
                CovarianceModel::explicit(m)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            CorrelationSpec::Equicorrelation { rho } => format!("equicorr({rho})"),
            CorrelationSpec::PowerDecay { a } => format!("decay({a})"),
            CorrelationSpec::Explicit { .. } => "explicit".to_string(),
        }
    }
}

/// A correlation matrix `Σ` (unit diagonal, symmetric, positive definite)
/// together with its Cholesky factor.
///
/// Construction fails with [`Error::NotPositiveDefinite`] for inadmissible
/// parameters, so every live value can be whitened.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    spec: CorrelationSpec,
    matrix: Matrix,
    factor: Matrix,
}

impl CovarianceModel {
    pub fn identity(k: usize) -> Result<Self> {
        Self::equicorrelation(0.0, k)
    }

    pub fn equicorrelation(rho: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let lower = if k > 1 { -1.0 / (k as f64 - 1.0) } else { -1.0 };
        if !(rho > lower && rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "equicorrelation needs rho in ({lower}, 1), got {rho}"
            )));
        }
        let matrix = Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho });
        Self::build(CorrelationSpec::Equicorrelation { rho }, matrix)
    }

    pub fn power_decay(a: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(a > -1.0 && a < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "power decay needs a in (-1, 1), got {a}"
            )));
        }
        let matrix = Matrix::from_fn(k, k, |i, j| a.powi(i.abs_diff(j) as i32));
        Self::build(CorrelationSpec::PowerDecay { a }, matrix)
    }

    /// Wraps an explicit correlation matrix; it must be exactly symmetric
    /// with a unit diagonal.
    pub fn explicit(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() == 0 {
            return Err(Error::InvalidParameter("correlation matrix must be square and nonempty".into()));
        }
        if !matrix.is_symmetric() {
            return Err(Error::InvalidParameter("correlation matrix must be symmetric".into()));
        }
        if (0..matrix.rows()).any(|i| matrix[(i, i)] != 1.0) {
            return Err(Error::InvalidParameter("correlation matrix must have a unit diagonal".into()));
        }
        let spec = CorrelationSpec::Explicit {
            values: matrix.to_rows(),
        };
        Self::build(spec, matrix)
    }

    /// Rescales a covariance matrix to correlation form.
    pub fn from_covariance(cov: &Matrix) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::DimensionMismatch {
                expected: cov.rows(),
                got: cov.cols(),
            });
        }
        let k = cov.rows();
        let sd: Vec<f64> = (0..k).map(|i| cov[(i, i)].sqrt()).collect();
        if let Some(i) = sd.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateSample(format!("coordinate {i} has zero variance")));
        }
        let mut corr = Matrix::zeros(k, k);
        for i in 0..k {
            corr[(i, i)] = 1.0;
            for j in 0..i {
                let r = (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0);
                corr[(i, j)] = r;
                corr[(j, i)] = r;
            }
        }
        Self::explicit(corr)
    }

    fn build(spec: CorrelationSpec, matrix: Matrix) -> Result<Self> {
        let factor = cholesky(&matrix)?;
        Ok(Self {
            spec,
            matrix,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn spec(&self) -> &CorrelationSpec {
        &self.spec
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Lower-triangular `L` with `L Lᵀ = Σ`.
    pub fn cholesky(&self) -> &Matrix {
        &self.factor
    }

    pub fn inverse(&self) -> Matrix {
        cholesky_inverse(&self.factor)
    }

    /// `L⁻¹ x`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        solve_lower(&self.factor, x)
    }

    /// `L z`, mapping standard normal draws to `N(0, Σ)`.
    pub fn color(&self, z: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let mut out = vec![0.0; k];
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.factor.row(i)[..=i], &z[..=i]);
        }
        out
    }

    /// `Σ⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        cholesky_solve(&self.factor, b)
    }

    /// `xᵀ Σ⁻¹ x` through one triangular solve.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let y = self.whiten(x);
        Ok(dot(&y, &y))
    }

    /// Correlation model of the coordinates in `indices`.
    pub fn sub_model(&self, indices: &[usize]) -> Result<CovarianceModel> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.dim()) {
            return Err(Error::EmptySubset);
        }
        if indices.len() == self.dim() && indices.iter().enumerate().all(|(a, &i)| a == i) {
            return Ok(self.clone());
        }
        let sub = self.matrix.principal_submatrix(indices);
        let spec = CorrelationSpec::Explicit {
            values: sub.to_rows(),
        };
        Self::build(spec, sub)
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// Free-function form of [`CovarianceModel::quad_form`].
pub fn quad_form(x: &[f64], sigma: &CovarianceModel) -> Result<f64> {
    sigma.quad_form(x)
}
