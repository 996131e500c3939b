//! Nested importance sampling and its wrapper as a properly weighted sampler.
//!
//! Each of the `N` draws comes from its own inner sampler built for the
//! proposal `q` at precision `M`; the importance weight is the inner estimate
//! `Z_hat_q` times `π(X)/q(X)`. Because `(X, Z_hat_q)` is properly weighted for
//! `q`, the resulting `(X, W)` are properly weighted for `π`. Resampling one
//! value from the weighted set and reporting the mean weight gives a sampler
//! that is itself properly weighted for `π`, so the construction nests.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampler::{ProperSampler, ProperSamplerFactory, UnnormalizedDensity};
use crate::weight::{log_mean_exp, Categorical, LogWeight};

/// Weighted draws together with the log of their mean weight.
#[derive(Debug, Clone)]
pub struct WeightedSet<X> {
    pub values: Vec<X>,
    pub log_weights: Vec<LogWeight>,
    pub log_z: LogWeight,
}

impl<X> WeightedSet<X> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Self-normalized estimate of `E_π[f]`. Fails when every weight is zero.
    pub fn estimate(&self, f: impl Fn(&X) -> f64) -> Result<f64> {
        let p = crate::weight::normalize(&self.log_weights)?;
        Ok(self.values.iter().zip(p).map(|(x, w)| w * f(x)).sum())
    }
}

/// Runs nested importance sampling with `n` outer draws and inner precision `m`.
///
/// Draw `i` uses the stream `rng.split(i)` for both construction and simulation
/// of its inner sampler.
pub fn nested_is<X, P, Q, F>(
    target: &P,
    proposal: &Q,
    factory: &F,
    n: usize,
    m: usize,
    rng: &RngStream,
) -> Result<WeightedSet<X>>
where
    P: UnnormalizedDensity<X> + ?Sized,
    Q: UnnormalizedDensity<X> + ?Sized,
    F: ProperSamplerFactory<Q> + ?Sized,
    F::Sampler: ProperSampler<Value = X>,
{
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("N and M must be positive".into()));
    }
    let mut values = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut stream = rng.split(i as u64);
        let sampler = factory
            .build(proposal, m, &mut stream)
            .map_err(|e| e.at_particle(0, i))?;
        let log_zq = sampler.log_z();
        let x = sampler.simulate(&mut stream)?;
        let log_q = proposal.log_density(&x);
        if log_q == f64::NEG_INFINITY {
            return Err(Error::ZeroProposalDensity { step: 0, particle: i });
        }
        let ratio = target.log_density(&x) - log_q;
        let w = log_zq * LogWeight::new(ratio).map_err(|_| Error::NanWeight { index: i })?;
        values.push(x);
        log_weights.push(w);
    }
    let log_z = log_mean_exp(&log_weights)?;
    Ok(WeightedSet {
        values,
        log_weights,
        log_z,
    })
}

/// A nested IS run packaged as a properly weighted sampler for its target.
///
/// `simulate` draws an index with probability proportional to the cached
/// weights and returns that value; every call reuses the same cached set.
#[derive(Debug, Clone)]
pub struct NestedIsSampler<X> {
    set: WeightedSet<X>,
    table: Option<Categorical>,
}

impl<X> NestedIsSampler<X> {
    pub fn from_set(set: WeightedSet<X>) -> Self {
        let table = Categorical::new(&set.log_weights).ok();
        NestedIsSampler { set, table }
    }

    pub fn weighted_set(&self) -> &WeightedSet<X> {
        &self.set
    }
}

impl<X: Clone> ProperSampler for NestedIsSampler<X> {
    type Value = X;

    fn log_z(&self) -> LogWeight {
        self.set.log_z
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<X> {
        let table = self.table.as_ref().ok_or(Error::DegenerateWeights)?;
        Ok(self.set.values[table.sample(rng)].clone())
    }
}

/// Runs [`nested_is`] once and wraps the result as a sampler for `target`.
pub fn nis_as_proper_sampler<X, P, Q, F>(
    target: &P,
    proposal: &Q,
    factory: &F,
    n: usize,
    m: usize,
    rng: &RngStream,
) -> Result<NestedIsSampler<X>>
where
    P: UnnormalizedDensity<X> + ?Sized,
    Q: UnnormalizedDensity<X> + ?Sized,
    F: ProperSamplerFactory<Q> + ?Sized,
    F::Sampler: ProperSampler<Value = X>,
{
    Ok(NestedIsSampler::from_set(nested_is(target, proposal, factory, n, m, rng)?))
}

/// Factory producing [`NestedIsSampler`]s for any target density, using a fixed
/// proposal and an inner factory for that proposal. The factory's precision is
/// the number of outer draws; `inner_precision` is handed to the inner factory.
#[derive(Debug, Clone)]
pub struct NestedIsFactory<Q, F> {
    pub proposal: Q,
    pub inner: F,
    pub inner_precision: usize,
}

impl<X, P, Q, F> ProperSamplerFactory<P> for NestedIsFactory<Q, F>
where
    X: Clone,
    P: UnnormalizedDensity<X>,
    Q: UnnormalizedDensity<X>,
    F: ProperSamplerFactory<Q>,
    F::Sampler: ProperSampler<Value = X>,
{
    type Sampler = NestedIsSampler<X>;

    fn build(&self, density: &P, precision: usize, rng: &mut RngStream) -> Result<Self::Sampler> {
        nis_as_proper_sampler(density, &self.proposal, &self.inner, precision, self.inner_precision, rng)
    }
}
