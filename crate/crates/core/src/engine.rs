//! Forward passes: fully adapted SMC, nested SMC with fully adapted weights,
//! and nested auxiliary SMC with adjustment multipliers.
//!
//! Steps are numbered from 1 in errors and stream labels, from 0 when indexing
//! a [`ParticleHistory`]. All three passes share one stream layout so that they
//! can be compared draw for draw: step `k` uses `rng.split(k)`; inside it,
//! ancestor `j` uses `.split(j)` both to build its sampler and for every
//! `simulate` call on it, and the multinomial resampling uses
//! `.split(RESAMPLE_STREAM)`. No stream depends on the order in which the
//! ancestors are processed.

use crate::error::{Error, Result};
use crate::history::{ParticleHistory, StepRecord};
use crate::rng::RngStream;
use crate::sampler::ProperSampler;
use crate::target::{Extended, Path, SequentialTarget};
use crate::weight::{
    ancestor_indices_from_counts, log_mean_exp, log_sum_exp, resample_multinomial, LogWeight,
};

/// Split index reserved for the resampling stream of each step.
pub const RESAMPLE_STREAM: u64 = u64::MAX;

/// Builds properly weighted samplers for the step proposal `q_k(· | x_{1:k-1})`.
///
/// The step is `prefix.len() + 1`.
pub trait StepSamplerFactory<T: SequentialTarget> {
    type Sampler: ProperSampler<Value = T::State>;

    fn build(
        &self,
        target: &T,
        prefix: &dyn Path<T::State>,
        precision: usize,
        rng: &mut RngStream,
    ) -> Result<Self::Sampler>;
}

/// Exact access to the optimal proposal `π_k / π_{k-1}`: its normalizing
/// constant and exact draws, packaged as a sampler whose `log_z` is exact.
pub trait ExactProposal<T: SequentialTarget> {
    type Kernel: ProperSampler<Value = T::State>;

    fn kernel(&self, target: &T, prefix: &dyn Path<T::State>) -> Result<Self::Kernel>;
}

/// Turns an [`ExactProposal`] into a factory that ignores precision and randomness.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactFactory<P>(pub P);

impl<T, P> StepSamplerFactory<T> for ExactFactory<P>
where
    T: SequentialTarget,
    P: ExactProposal<T>,
{
    type Sampler = P::Kernel;

    fn build(
        &self,
        target: &T,
        prefix: &dyn Path<T::State>,
        _precision: usize,
        _rng: &mut RngStream,
    ) -> Result<P::Kernel> {
        self.0.kernel(target, prefix)
    }
}

/// Evaluates the unnormalized step proposal `log q_k(x | x_{1:k-1})`.
///
/// It must be the density whose normalizing constant the matching factory estimates.
pub trait StepProposalDensity<T: SequentialTarget> {
    fn log_density(&self, target: &T, prefix: &dyn Path<T::State>, x: &T::State) -> f64;
}

/// The optimal proposal `q_k = π_k / π_{k-1}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OptimalProposal;

impl<T: SequentialTarget> StepProposalDensity<T> for OptimalProposal {
    fn log_density(&self, target: &T, prefix: &dyn Path<T::State>, x: &T::State) -> f64 {
        target.log_increment(&Extended::new(prefix, x))
    }
}

/// Adjustment multipliers `ν_{k-1}(x_{1:k-1}, Z_hat_q)` biasing resampling.
pub trait AdjustmentMultiplier<S> {
    fn evaluate(&self, prefix: &dyn Path<S>, log_zq: LogWeight) -> LogWeight;
}

/// `ν ≡ 1`: resampling on the importance weights alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitMultiplier;

impl<S> AdjustmentMultiplier<S> for UnitMultiplier {
    fn evaluate(&self, _prefix: &dyn Path<S>, _log_zq: LogWeight) -> LogWeight {
        LogWeight::ONE
    }
}

/// `ν = Z_hat_q`, the fully adapted choice.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullyAdaptedMultiplier;

impl<S> AdjustmentMultiplier<S> for FullyAdaptedMultiplier {
    fn evaluate(&self, _prefix: &dyn Path<S>, log_zq: LogWeight) -> LogWeight {
        log_zq
    }
}

fn check_sizes(horizon: usize, n_particles: usize, precision: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("target horizon must be positive".into()));
    }
    if n_particles == 0 || precision == 0 {
        return Err(Error::InvalidParameter("N and M must be positive".into()));
    }
    Ok(())
}

/// Calls `f` with the path of ancestor `j`: the empty path before the first
/// step, otherwise the lineage of particle `j` at the last completed step.
fn with_prefix<S, R>(
    history: &ParticleHistory<S>,
    empty: &Vec<S>,
    j: usize,
    f: impl FnOnce(&dyn Path<S>) -> R,
) -> R {
    match history.steps() {
        0 => f(empty),
        s => f(&history.lineage(s - 1, j)),
    }
}

fn resample(step: usize, rng: &RngStream, weights: &[LogWeight], n: usize) -> Result<Vec<usize>> {
    let mut stream = rng.split(RESAMPLE_STREAM);
    resample_multinomial(&mut stream, weights, n).map_err(|e| match e {
        Error::DegenerateWeights => Error::FullDegeneracy { step },
        other => other,
    })
}

fn checked_weight(log_w: f64, index: usize) -> Result<LogWeight> {
    if log_w.is_nan() || log_w == f64::INFINITY {
        return Err(Error::NanWeight { index });
    }
    Ok(LogWeight::from_ln_unchecked(log_w))
}

/// Fully adapted SMC with exact optimal proposals.
///
/// `Z_hat_k = Z_hat_{k-1} · mean_j Z_{q_k}(X^j_{1:k-1})`; resampling is
/// multinomial on the `Z_{q_k}` values, including at `k = 1` where every
/// ancestor is the empty path and the resampling changes nothing.
pub fn run_fully_adapted_smc<T, P>(
    target: &T,
    proposal: &P,
    n_particles: usize,
    rng: &RngStream,
) -> Result<ParticleHistory<T::State>>
where
    T: SequentialTarget,
    P: ExactProposal<T>,
{
    let n = target.horizon();
    check_sizes(n, n_particles, 1)?;
    let empty = Vec::new();
    let mut history = ParticleHistory::new(n_particles, true, n);
    let mut log_z = LogWeight::ONE;
    for k in 1..=n {
        let step_rng = rng.split(k as u64);
        let mut kernels = Vec::with_capacity(n_particles);
        for j in 0..n_particles {
            let kernel = with_prefix(&history, &empty, j, |prefix| proposal.kernel(target, prefix))
                .map_err(|e| e.at_particle(k, j))?;
            kernels.push(kernel);
        }
        let zq: Vec<LogWeight> = kernels.iter().map(|q| q.log_z()).collect();
        let counts = resample(k, &step_rng, &zq, n_particles)?;

        let mut values = Vec::with_capacity(n_particles);
        let mut ancestors = vec![0; n_particles];
        let mut filled = 0;
        for (j, kernel) in kernels.into_iter().enumerate() {
            let mut stream = step_rng.split(j as u64);
            for i in filled..filled + counts[j] {
                values.push(kernel.simulate(&mut stream)?);
                ancestors[i] = j;
            }
            filled += counts[j];
        }

        log_z = log_z * log_mean_exp(&zq)?;
        history.push(StepRecord {
            values,
            ancestors,
            log_weights: vec![LogWeight::ONE; n_particles],
            resampling_log_weights: zq.clone(),
            inner_log_z: zq,
            log_z,
        });
    }
    Ok(history)
}

/// Nested SMC with fully adapted weights.
///
/// One sampler is built per ancestor at precision `precision`; its `log_z`
/// stands in for `Z_{q_k}` and its `m_k^j` offspring all come from repeated
/// `simulate` calls on the same object, which is dropped afterwards.
pub fn run_nested_smc_fa<T, F>(
    target: &T,
    factory: &F,
    n_particles: usize,
    precision: usize,
    rng: &RngStream,
) -> Result<ParticleHistory<T::State>>
where
    T: SequentialTarget,
    F: StepSamplerFactory<T>,
{
    let n = target.horizon();
    check_sizes(n, n_particles, precision)?;
    let empty = Vec::new();
    let mut history = ParticleHistory::new(n_particles, true, n);
    let mut log_z = LogWeight::ONE;
    for k in 1..=n {
        let step_rng = rng.split(k as u64);
        let mut samplers = Vec::with_capacity(n_particles);
        for j in 0..n_particles {
            let mut stream = step_rng.split(j as u64);
            let sampler = with_prefix(&history, &empty, j, |prefix| {
                factory.build(target, prefix, precision, &mut stream)
            })
            .map_err(|e| e.at_particle(k, j))?;
            samplers.push((sampler, stream));
        }
        let zq: Vec<LogWeight> = samplers.iter().map(|(s, _)| s.log_z()).collect();
        let counts = resample(k, &step_rng, &zq, n_particles)?;
        let ancestors = ancestor_indices_from_counts(&counts);

        let mut values = Vec::with_capacity(n_particles);
        for (j, (sampler, mut stream)) in samplers.into_iter().enumerate() {
            for _ in 0..counts[j] {
                values.push(sampler.simulate(&mut stream)?);
            }
        }

        log_z = log_z * log_mean_exp(&zq)?;
        history.push(StepRecord {
            values,
            ancestors,
            log_weights: vec![LogWeight::ONE; n_particles],
            resampling_log_weights: zq.clone(),
            inner_log_z: zq,
            log_z,
        });
    }
    Ok(history)
}

/// Nested auxiliary SMC.
///
/// Ancestors are resampled with probabilities proportional to `ν̂^j W^j_{k-1}`
/// (`W_0 ≡ 1`); offspring get
/// `W = [π_k / π_{k-1}] · Z_hat_q^j / (ν̂^j q_k(X | X^j_{1:k-1}))` and
/// `Z_hat_k = Z_hat_{k-1} · mean(ν̂ W_{k-1}) · sum(W_k) / sum(W_{k-1})`.
pub fn run_nested_smc_aux<T, F, Q, V>(
    target: &T,
    factory: &F,
    proposal_density: &Q,
    multiplier: &V,
    n_particles: usize,
    precision: usize,
    rng: &RngStream,
) -> Result<ParticleHistory<T::State>>
where
    T: SequentialTarget,
    F: StepSamplerFactory<T>,
    Q: StepProposalDensity<T>,
    V: AdjustmentMultiplier<T::State>,
{
    let n = target.horizon();
    check_sizes(n, n_particles, precision)?;
    let empty = Vec::new();
    let mut history = ParticleHistory::new(n_particles, false, n);
    let mut log_z = LogWeight::ONE;
    let mut prev_w = vec![LogWeight::ONE; n_particles];
    for k in 1..=n {
        let step_rng = rng.split(k as u64);
        let mut samplers = Vec::with_capacity(n_particles);
        let mut nu = Vec::with_capacity(n_particles);
        for j in 0..n_particles {
            let mut stream = step_rng.split(j as u64);
            let (sampler, nu_j) = with_prefix(&history, &empty, j, |prefix| {
                let s = factory.build(target, prefix, precision, &mut stream)?;
                let v = multiplier.evaluate(prefix, s.log_z());
                Ok::<_, Error>((s, v))
            })
            .map_err(|e| e.at_particle(k, j))?;
            samplers.push((sampler, stream));
            nu.push(nu_j);
        }
        let zq: Vec<LogWeight> = samplers.iter().map(|(s, _)| s.log_z()).collect();
        let resampling: Vec<LogWeight> = nu.iter().zip(&prev_w).map(|(&v, &w)| v * w).collect();
        let counts = resample(k, &step_rng, &resampling, n_particles)?;
        let ancestors = ancestor_indices_from_counts(&counts);

        let mut values = Vec::with_capacity(n_particles);
        let mut weights = Vec::with_capacity(n_particles);
        for (j, (sampler, mut stream)) in samplers.into_iter().enumerate() {
            if counts[j] == 0 {
                continue;
            }
            with_prefix(&history, &empty, j, |prefix| -> Result<()> {
                for _ in 0..counts[j] {
                    let i = values.len();
                    let x = sampler.simulate(&mut stream)?;
                    let log_q = proposal_density.log_density(target, prefix, &x);
                    if log_q == f64::NEG_INFINITY {
                        return Err(Error::ZeroProposalDensity { step: k, particle: i });
                    }
                    let inc = target.log_increment(&Extended::new(prefix, &x));
                    let log_w = if inc == f64::NEG_INFINITY || zq[j].is_zero() {
                        f64::NEG_INFINITY
                    } else {
                        inc + zq[j].ln() - nu[j].ln() - log_q
                    };
                    weights.push(checked_weight(log_w, i)?);
                    values.push(x);
                }
                Ok(())
            })?;
        }

        let factor = log_mean_exp(&resampling)?;
        let ratio = log_sum_exp(&weights)? / log_sum_exp(&prev_w)?;
        log_z = log_z * factor * ratio;
        history.push(StepRecord {
            values,
            ancestors,
            log_weights: weights.clone(),
            resampling_log_weights: resampling,
            inner_log_z: zq,
            log_z,
        });
        prev_w = weights;
    }
    Ok(history)
}

/// Effective resample size of the weights used to pick the ancestors at `step` (0-based).
pub fn ers_of_step<S>(history: &ParticleHistory<S>, step: usize) -> Result<f64> {
    history.ers(step)
}
