//! One-dimensional Gaussian kernels with exact samplers, used as reference
//! proposals and as the innermost level of test compositions.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampler::{ProperSampler, ProperSamplerFactory, UnnormalizedDensity};
use crate::weight::LogWeight;

/// `scale * exp(-precision/2 (x - mean)^2)`, with `log_scale = ln(scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub mean: f64,
    pub precision: f64,
    pub log_scale: f64,
}

impl GaussianKernel {
    pub fn new(mean: f64, precision: f64) -> Result<Self> {
        if !(precision > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gaussian kernel needs finite mean and positive precision, got ({mean}, {precision})"
            )));
        }
        Ok(GaussianKernel {
            mean,
            precision,
            log_scale: 0.0,
        })
    }

    /// Normalized density `N(mean, variance)`.
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        let mut k = Self::new(mean, 1.0 / variance)?;
        k.log_scale = -0.5 * (2.0 * PI * variance).ln();
        Ok(k)
    }

    /// `ln ∫ kernel`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_scale + 0.5 * (2.0 * PI / self.precision).ln()
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + z / self.precision.sqrt()
    }
}

impl UnnormalizedDensity<f64> for GaussianKernel {
    fn log_density(&self, x: &f64) -> f64 {
        let r = x - self.mean;
        self.log_scale - 0.5 * self.precision * r * r
    }
}

/// Exact sampler for a [`GaussianKernel`]: returns the true normalizer and iid draws.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSampler {
    kernel: GaussianKernel,
    log_z: LogWeight,
}

impl GaussianSampler {
    pub fn new(kernel: GaussianKernel) -> Result<Self> {
        Ok(GaussianSampler {
            kernel,
            log_z: LogWeight::new(kernel.log_normalizer())?,
        })
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }
}

impl ProperSampler for GaussianSampler {
    type Value = f64;

    fn log_z(&self) -> LogWeight {
        self.log_z
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<f64> {
        Ok(self.kernel.sample(rng))
    }
}

/// Factory that ignores the precision and returns exact samplers for a [`GaussianKernel`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactGaussianFactory;

impl ProperSamplerFactory<GaussianKernel> for ExactGaussianFactory {
    type Sampler = GaussianSampler;

    fn build(&self, density: &GaussianKernel, _precision: usize, _rng: &mut RngStream) -> Result<GaussianSampler> {
        GaussianSampler::new(*density)
    }
}

/// `θ ~ N(0, s_θ²)`, `x | θ ~ N(θ, s_x²)`, `y | x ~ N(x, s_y²)` with one
/// observation `y`. The parameter proposal is `N(0, g_sd²)` and the latent
/// proposal is the prior `p(x | θ)`, so `p_hat_M(y | θ)` averages `p(y | x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateGaussian {
    pub y: f64,
    pub prior_var: f64,
    pub latent_var: f64,
    pub obs_var: f64,
    pub proposal_sd: f64,
}

impl ConjugateGaussian {
    pub fn new(y: f64, prior_var: f64, latent_var: f64, obs_var: f64, proposal_sd: f64) -> Result<Self> {
        if [prior_var, latent_var, obs_var, proposal_sd].iter().any(|v| !(*v > 0.0)) || !y.is_finite() {
            return Err(Error::InvalidParameter("variances must be positive and y finite".into()));
        }
        Ok(ConjugateGaussian {
            y,
            prior_var,
            latent_var,
            obs_var,
            proposal_sd,
        })
    }

    /// `log N(y; 0, s_θ² + s_x² + s_y²)`.
    pub fn log_evidence(&self) -> f64 {
        let v = self.prior_var + self.latent_var + self.obs_var;
        -0.5 * (2.0 * PI * v).ln() - 0.5 * self.y * self.y / v
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (x - mean) * (x - mean) / var
}

impl crate::sis::IsSquaredProblem for ConjugateGaussian {
    type Param = f64;
    type Latent = f64;

    fn log_prior(&self, theta: &f64) -> f64 {
        log_normal(*theta, 0.0, self.prior_var)
    }

    fn log_joint(&self, theta: &f64, x: &f64) -> f64 {
        log_normal(self.y, *x, self.obs_var) + log_normal(*x, *theta, self.latent_var)
    }

    fn sample_param(&self, rng: &mut RngStream) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.proposal_sd * z
    }

    fn log_param_proposal(&self, theta: &f64) -> f64 {
        log_normal(*theta, 0.0, self.proposal_sd * self.proposal_sd)
    }

    fn sample_latent(&self, theta: &f64, rng: &mut RngStream) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        theta + self.latent_var.sqrt() * z
    }

    fn log_latent_proposal(&self, theta: &f64, x: &f64) -> f64 {
        log_normal(*x, *theta, self.latent_var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_matches_closed_form() {
        let k = GaussianKernel::new(1.0, 0.5).unwrap();
        assert!((k.log_normalizer() - (4.0 * PI).sqrt().ln()).abs() < 1e-14);
        let n = GaussianKernel::normal(3.0, 2.0).unwrap();
        assert!(n.log_normalizer().abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_precision() {
        assert!(GaussianKernel::new(0.0, 0.0).is_err());
        assert!(GaussianKernel::new(0.0, f64::NAN).is_err());
    }
}
