use crate::math::RngStream;
use crate::{ensure, Result};

/// Draws ranks `0..K` with probability proportional to `(rank + 1)^-α`.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
    alpha: f64,
}

impl ZipfSampler {
    pub fn new(k: usize, alpha: f64) -> Result<Self> {
        ensure!(k >= 1, Config, "zipf support must be non-empty");
        ensure!(
            alpha.is_finite() && alpha > 0.0,
            Config,
            "zipf exponent must be positive, got {alpha}"
        );
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=k)
            .map(|r| {
                acc += (r as f64).powf(-alpha);
                acc
            })
            .collect();
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { cdf, alpha })
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Probability of `rank` (0-based).
    pub fn probability(&self, rank: usize) -> f64 {
        self.cdf[rank] - if rank == 0 { 0.0 } else { self.cdf[rank - 1] }
    }

    pub fn sample(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

pub fn sample_zipf_indices(
    k: usize,
    alpha: f64,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let z = ZipfSampler::new(k, alpha)?;
    Ok((0..count).map(|_| z.sample(rng)).collect())
}
