//! Linear algebra, distribution functions and seeded sampling.

pub mod covariance;
pub mod dist;
pub mod linalg;
pub mod rng;

pub use covariance::{quad_form, CorrelationSpec, CovarianceModel};
pub use dist::{
    chisq_cdf, chisq_quantile, chisq_sf, std_normal_cdf, std_normal_quantile, std_normal_sf,
};
pub use linalg::{cholesky, Matrix};
pub use rng::{mvn_sample, RngStream};
