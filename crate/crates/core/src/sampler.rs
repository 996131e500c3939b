//! The properly weighted sampler contract.
//!
//! A sampler is built for an unnormalized density `q` at some precision `M`.
//! Construction fixes a nonnegative, unbiased estimate of `Z_q`; every call to
//! [`ProperSampler::simulate`] returns a value `X` such that `(X, Z_hat)` is
//! properly weighted for `q`, i.e. `E[f(X) Z_hat] = ∫ f q` for every `f`.

use crate::error::Result;
use crate::rng::RngStream;
use crate::weight::LogWeight;

/// A sampler object obeying the properly weighted contract.
pub trait ProperSampler {
    type Value;

    /// Log of the normalizing-constant estimate fixed at construction.
    fn log_z(&self) -> LogWeight;

    /// Draws a value. Repeated calls reuse the sampler's internal state with fresh randomness.
    fn simulate(&self, rng: &mut RngStream) -> Result<Self::Value>;
}

/// An unnormalized density evaluated in log space.
pub trait UnnormalizedDensity<X: ?Sized> {
    fn log_density(&self, x: &X) -> f64;
}

impl<X: ?Sized, F> UnnormalizedDensity<X> for F
where
    F: Fn(&X) -> f64,
{
    fn log_density(&self, x: &X) -> f64 {
        self(x)
    }
}

/// Builds properly weighted samplers for a fixed (non-sequential) density `Q`.
pub trait ProperSamplerFactory<Q: ?Sized> {
    type Sampler: ProperSampler;

    fn build(&self, density: &Q, precision: usize, rng: &mut RngStream) -> Result<Self::Sampler>;
}

/// A sampler that returns a fixed normalizing constant and exact draws.
///
/// This is the degenerate member of the family: `Z_hat = Z_q` and `X ~ q / Z_q`.
pub struct ExactSampler<X, F> {
    log_z: LogWeight,
    draw: F,
    _marker: std::marker::PhantomData<fn() -> X>,
}

impl<X, F> ExactSampler<X, F>
where
    F: Fn(&mut RngStream) -> X,
{
    pub fn new(log_z: LogWeight, draw: F) -> Self {
        ExactSampler {
            log_z,
            draw,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<X, F> ProperSampler for ExactSampler<X, F>
where
    F: Fn(&mut RngStream) -> X,
{
    type Value = X;

    fn log_z(&self) -> LogWeight {
        self.log_z
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<X> {
        Ok((self.draw)(rng))
    }
}
