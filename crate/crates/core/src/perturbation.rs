//! Multiplicative Gaussian resampling of a query image.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gaussian_sample, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationConfig {
    /// Number of perturbed samples.
    pub n: usize,
    /// Standard deviation of the per-pixel noise factor.
    pub sigma: f64,
    /// Mean of the noise factor. Fixed at 1 for the multiplicative filter.
    pub mean: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            n: 50,
            sigma: 0.1,
            mean: 1.0,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("perturbation sample count must be >= 2"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("perturbation sigma must be > 0"));
        }
        Ok(())
    }
}

/// Sample `i` of the batch: `clamp(image * F_i, 0, 1)` with every value of
/// `F_i` drawn from `Normal(mean, sigma^2)` on stream `i` of `cfg.seed`.
pub fn perturb_sample(image: &Tensor, cfg: &PerturbationConfig, i: usize) -> Result<Tensor> {
    let mut rng = Rng::new(cfg.seed, i as u64);
    let filter = gaussian_sample(&mut rng, cfg.mean, cfg.sigma, image.shape().to_vec())?;
    let data = image
        .data()
        .iter()
        .zip(filter.data())
        .map(|(&p, &f)| (p * f).clamp(0.0, 1.0))
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}

/// The `n` perturbed copies of `image`; the original is not included.
pub fn perturb_batch(image: &Tensor, cfg: &PerturbationConfig) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.n).into_par_iter().map(|i| perturb_sample(image, cfg, i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..cfg.n).map(|i| perturb_sample(image, cfg, i)).collect()
    }
}
