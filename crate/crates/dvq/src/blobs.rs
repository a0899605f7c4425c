//! Gaussian blob datasets with a fixed (static) prior.
//!
//! Component means are drawn uniformly from a hypercube, then each sample
//! picks a component uniformly and adds isotropic Gaussian noise. Because
//! the generating means are returned alongside the data, tests can compare
//! a trained codebook against the analytically optimal one (a codebook
//! sitting exactly on the means scores `d * sigma^2` in expectation).

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::rng_from;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

fn default_center_low() -> f64 {
    -1.0
}

fn default_center_high() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    0.01
}

/// Parameters of a blob dataset. The serde defaults mirror the standard
/// experiment setup: means in `[-1, 1]^d`, noise sigma 0.01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    /// Number of Gaussian components (`N_G`).
    pub n_components: usize,
    /// Feature dimension.
    pub d: usize,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_center_low")]
    pub center_low: f64,
    #[serde(default = "default_center_high")]
    pub center_high: f64,
}

impl BlobSpec {
    pub fn new(n_components: usize, d: usize, n_samples: usize, seed: u64) -> Self {
        BlobSpec {
            n_components,
            d,
            n_samples,
            seed,
            sigma: default_sigma(),
            center_low: default_center_low(),
            center_high: default_center_high(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::invalid("blob spec needs at least one component"));
        }
        if self.d == 0 {
            return Err(Error::invalid("blob spec needs d >= 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("blob spec needs at least one sample"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid(format!(
                "blob sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.center_low.is_finite()
            && self.center_high.is_finite()
            && self.center_low < self.center_high)
        {
            return Err(Error::invalid(format!(
                "blob center range [{}, {}) is invalid",
                self.center_low, self.center_high
            )));
        }
        Ok(())
    }
}

/// Samples plus ground truth: which component produced each row, and the
/// component means themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobDataset {
    pub data: Matrix,
    pub labels: Vec<usize>,
    pub means: Matrix,
}

/// Deterministic generation: one ChaCha stream seeded from `spec.seed`,
/// consumed in a fixed order (all means row-major, then per sample the
/// component choice followed by `d` noise draws).
pub fn generate_blobs(spec: &BlobSpec) -> Result<BlobDataset> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed);

    let means: Vec<f64> = (0..spec.n_components * spec.d)
        .map(|_| rng.random_range(spec.center_low..spec.center_high))
        .collect();
    let means = Matrix::from_vec(spec.n_components, spec.d, means)?;

    let mut data = Vec::with_capacity(spec.n_samples * spec.d);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let c = rng.random_range(0..spec.n_components);
        labels.push(c);
        let mu = means.row(c);
        for &m in mu {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(m + spec.sigma * z);
        }
    }

    Ok(BlobDataset {
        data: Matrix::from_vec(spec.n_samples, spec.d, data)?,
        labels,
        means,
    })
}
