use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::covariance::CovarianceModel;
use super::linalg::Matrix;
use crate::error::{Error, Result};

/// Rows generated per parallel task in [`mvn_sample`].
const SAMPLE_CHUNK: usize = 4096;

/// A seeded, splittable random stream.
///
/// The generator is ChaCha8 keyed by `seed` with `stream_id` selecting the
/// ChaCha stream, so distinct ids give non-overlapping sequences. Tasks that
/// run in parallel each take their own [`substream`](Self::substream).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream number `index`; the mapping is a fixed function of the
    /// parent id, so nested splitting stays reproducible.
    pub fn substream(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(1)));
        RngStream {
            seed: self.seed,
            stream_id: id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Fills `out` with independent standard normal variates.
pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// `count` rows of `N(0, Σ)` draws.
pub fn mvn_sample(sigma: &CovarianceModel, count: usize, stream: RngStream) -> Result<Matrix> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    let k = sigma.dim();
    let mut data = vec![0.0; count * k];
    data.par_chunks_mut(SAMPLE_CHUNK * k)
        .enumerate()
        .for_each(|(chunk, block)| {
            let mut rng = stream.substream(chunk as u64).rng();
            let mut z = vec![0.0; k];
            for row in block.chunks_mut(k) {
                fill_standard_normal(&mut rng, &mut z);
                row.copy_from_slice(&sigma.color(&z));
            }
        });
    Matrix::from_vec(count, k, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_stream_same_sequence() {
        let draw = |s: RngStream| {
            let mut r = s.rng();
            (0..5).map(|_| r.random()).collect::<Vec<u64>>()
        };
        let a = draw(RngStream::with_stream(7, 3));
        let b = draw(RngStream::with_stream(7, 3));
        assert_eq!(a, b);
        let c: u64 = RngStream::with_stream(7, 4).rng().random();
        assert_ne!(a[0], c);
    }

    #[test]
    fn substreams_differ() {
        let s = RngStream::new(1);
        assert_ne!(s.substream(0), s.substream(1));
        assert_ne!(s.substream(0).substream(1), s.substream(1).substream(0));
    }

    #[test]
    fn mvn_mean_near_zero() {
        let id = CovarianceModel::identity(1).unwrap();
        let x = mvn_sample(&id, 100_000, RngStream::new(11)).unwrap();
        assert!(x.column_means()[0].abs() < 0.01);
    }

    #[test]
    fn mvn_is_deterministic() {
        let s = CovarianceModel::equicorrelation(0.3, 3).unwrap();
        let a = mvn_sample(&s, 10_000, RngStream::new(5)).unwrap();
        let b = mvn_sample(&s, 10_000, RngStream::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mvn_correlation() {
        let s = CovarianceModel::equicorrelation(0.9, 2).unwrap();
        let x = mvn_sample(&s, 100_000, RngStream::new(2)).unwrap();
        let c = x.sample_covariance();
        let r = c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
        assert!((r - 0.9).abs() < 0.01, "{r}");
    }
}
