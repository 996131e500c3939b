//! Backward simulation and the wrapper that turns a whole nested SMC run into
//! a properly weighted sampler, which is what lets runs nest inside runs.

use std::marker::PhantomData;

use crate::engine::{
    run_nested_smc_aux, run_nested_smc_fa, AdjustmentMultiplier, StepProposalDensity,
    StepSamplerFactory,
};
use crate::error::{Error, Result};
use crate::history::{Lineage, ParticleHistory};
use crate::rng::RngStream;
use crate::sampler::ProperSampler;
use crate::target::{MarkovPath, Path, Prefix, SequentialTarget};
use crate::weight::{Categorical, LogWeight};

/// A path drawn from a history, with the particle index used at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub values: Vec<S>,
    pub indices: Vec<usize>,
}

/// Backward simulator for fully adapted histories: `B_n` uniform, then
/// `B_k ∝ π_n(X^j_{1:k}, X̃_{k+1:n}) / π_k(X^j_{1:k})`.
pub fn backward_simulate_fa<T: SequentialTarget>(
    history: &ParticleHistory<T::State>,
    target: &T,
    rng: &mut RngStream,
) -> Result<Trajectory<T::State>> {
    if !history.is_fully_adapted() {
        return Err(Error::InvalidParameter(
            "fully adapted backward simulation needs a history with unit weights".into(),
        ));
    }
    backward_simulate(history, target, rng, false)
}

/// Backward simulator for weighted histories: `B_n ∝ W_n`, then
/// `B_k ∝ W_k · π_n(X^j_{1:k}, X̃_{k+1:n}) / π_k(X^j_{1:k})`.
pub fn backward_simulate_weighted<T: SequentialTarget>(
    history: &ParticleHistory<T::State>,
    target: &T,
    rng: &mut RngStream,
) -> Result<Trajectory<T::State>> {
    backward_simulate(history, target, rng, true)
}

/// Sum of the increments whose value can depend on the choice of particle
/// `j` at step `k`: everything after `k` without a Markov window, only the
/// next `r` increments with window `r`.
fn backward_log_ratio<T: SequentialTarget>(
    history: &ParticleHistory<T::State>,
    target: &T,
    k: usize,
    j: usize,
    tail_rev: &[T::State],
) -> f64 {
    let n = history.steps();
    match target.markov_window() {
        Some(1) => {
            let x_next = tail_rev.last().expect("tail holds at least one value");
            target.log_increment(&MarkovPath::new(k + 2, Some(&history.values(k)[j]), x_next))
        }
        window => {
            let last = window.map_or(n, |r| n.min(k + 1 + r));
            let full = Lineage::new(history, k + 1, j, tail_rev, true);
            ((k + 2)..=last)
                .map(|len| target.log_increment(&Prefix::new(&full, len)))
                .sum()
        }
    }
}

fn backward_simulate<T: SequentialTarget>(
    history: &ParticleHistory<T::State>,
    target: &T,
    rng: &mut RngStream,
    weighted: bool,
) -> Result<Trajectory<T::State>> {
    let n = history.steps();
    let n_particles = history.n_particles();
    if n == 0 {
        return Err(Error::InvalidParameter("empty history".into()));
    }
    let last_weights = if weighted {
        history.log_weights(n - 1).to_vec()
    } else {
        vec![LogWeight::ONE; n_particles]
    };
    let table = Categorical::new(&last_weights).map_err(|e| match e {
        Error::DegenerateWeights => Error::BackwardDegeneracy { step: n },
        other => other,
    })?;
    let b_n = table.sample(rng);

    let mut indices_rev = Vec::with_capacity(n);
    let mut tail_rev = Vec::with_capacity(n);
    indices_rev.push(b_n);
    tail_rev.push(history.values(n - 1)[b_n].clone());

    let mut log_w = vec![LogWeight::ZERO; n_particles];
    for k in (0..n - 1).rev() {
        let base = history.log_weights(k);
        for (j, w) in log_w.iter_mut().enumerate() {
            let prior = if weighted { base[j] } else { LogWeight::ONE };
            if prior.is_zero() {
                *w = LogWeight::ZERO;
                continue;
            }
            let r = backward_log_ratio(history, target, k, j, &tail_rev);
            *w = if r.is_nan() || r == f64::INFINITY {
                return Err(Error::NanWeight { index: j });
            } else {
                prior * LogWeight::from_ln_unchecked(r)
            };
        }
        let b = Categorical::new(&log_w)
            .map_err(|e| match e {
                Error::DegenerateWeights => Error::BackwardDegeneracy { step: k + 1 },
                other => other,
            })?
            .sample(rng);
        indices_rev.push(b);
        tail_rev.push(history.values(k)[b].clone());
    }
    indices_rev.reverse();
    tail_rev.reverse();
    Ok(Trajectory {
        values: tail_rev,
        indices: indices_rev,
    })
}

/// Which backward simulator a cached run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardKind {
    FullyAdapted,
    Weighted,
}

/// A cached nested SMC run acting as a properly weighted sampler for the
/// final target `π_n`: `log_z` is the run's `Z_hat_{π_n}` and each `simulate`
/// call draws a fresh backward trajectory from the same history.
#[derive(Clone)]
pub struct NestedSmcSampler<T: SequentialTarget> {
    target: T,
    history: ParticleHistory<T::State>,
    kind: BackwardKind,
}

impl<T: SequentialTarget> NestedSmcSampler<T> {
    pub fn from_history(target: T, history: ParticleHistory<T::State>, kind: BackwardKind) -> Self {
        NestedSmcSampler {
            target,
            history,
            kind,
        }
    }

    pub fn history(&self) -> &ParticleHistory<T::State> {
        &self.history
    }

    pub fn target(&self) -> &T {
        &self.target
    }

    pub fn kind(&self) -> BackwardKind {
        self.kind
    }

    pub fn simulate_trajectory(&self, rng: &mut RngStream) -> Result<Trajectory<T::State>> {
        match self.kind {
            BackwardKind::FullyAdapted => backward_simulate_fa(&self.history, &self.target, rng),
            BackwardKind::Weighted => backward_simulate_weighted(&self.history, &self.target, rng),
        }
    }
}

impl<T: SequentialTarget> ProperSampler for NestedSmcSampler<T> {
    type Value = Vec<T::State>;

    fn log_z(&self) -> LogWeight {
        self.history.log_z()
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<Vec<T::State>> {
        Ok(self.simulate_trajectory(rng)?.values)
    }
}

/// Runs fully adapted nested SMC once and wraps the result.
pub fn nsmc_as_proper_sampler<T, F>(
    target: T,
    factory: &F,
    n_particles: usize,
    precision: usize,
    rng: &RngStream,
) -> Result<NestedSmcSampler<T>>
where
    T: SequentialTarget,
    F: StepSamplerFactory<T>,
{
    let history = run_nested_smc_fa(&target, factory, n_particles, precision, rng)?;
    Ok(NestedSmcSampler::from_history(target, history, BackwardKind::FullyAdapted))
}

/// Runs auxiliary nested SMC once and wraps the result with the weighted backward simulator.
pub fn nsmc_aux_as_proper_sampler<T, F, Q, V>(
    target: T,
    factory: &F,
    proposal_density: &Q,
    multiplier: &V,
    n_particles: usize,
    precision: usize,
    rng: &RngStream,
) -> Result<NestedSmcSampler<T>>
where
    T: SequentialTarget,
    F: StepSamplerFactory<T>,
    Q: StepProposalDensity<T>,
    V: AdjustmentMultiplier<T::State>,
{
    let history = run_nested_smc_aux(
        &target,
        factory,
        proposal_density,
        multiplier,
        n_particles,
        precision,
        rng,
    )?;
    Ok(NestedSmcSampler::from_history(target, history, BackwardKind::Weighted))
}

/// Splits one outer step into an inner sequential problem.
///
/// `inner_target(outer, x_{1:k-1})` must be a sequential target whose final
/// normalizing constant is `Z_{q_k}(x_{1:k-1})` of the outer optimal proposal
/// and whose final path, passed through `assemble`, is the outer state `x_k`.
pub trait Decomposition<T: SequentialTarget> {
    type Inner: SequentialTarget;

    fn inner_target(&self, outer: &T, prefix: &dyn Path<T::State>) -> Result<Self::Inner>;

    fn assemble(&self, inner_path: Vec<<Self::Inner as SequentialTarget>::State>) -> T::State;
}

/// Runs an inner sequential problem and returns the cached sampler.
pub trait InnerRunner<I: SequentialTarget> {
    fn run(&self, target: I, n_particles: usize, rng: &RngStream) -> Result<NestedSmcSampler<I>>;
}

/// Inner fully adapted nested SMC; its own factory is built at `precision`.
#[derive(Debug, Clone)]
pub struct FullyAdaptedRunner<F> {
    pub factory: F,
    pub precision: usize,
}

impl<I, F> InnerRunner<I> for FullyAdaptedRunner<F>
where
    I: SequentialTarget,
    F: StepSamplerFactory<I>,
{
    fn run(&self, target: I, n_particles: usize, rng: &RngStream) -> Result<NestedSmcSampler<I>> {
        nsmc_as_proper_sampler(target, &self.factory, n_particles, self.precision, rng)
    }
}

/// Inner auxiliary nested SMC, e.g. a bootstrap filter with an exact prior
/// factory, the prior density and unit multipliers.
#[derive(Debug, Clone)]
pub struct AuxRunner<F, Q, V> {
    pub factory: F,
    pub proposal_density: Q,
    pub multiplier: V,
    pub precision: usize,
}

impl<I, F, Q, V> InnerRunner<I> for AuxRunner<F, Q, V>
where
    I: SequentialTarget,
    F: StepSamplerFactory<I>,
    Q: StepProposalDensity<I>,
    V: AdjustmentMultiplier<I::State>,
{
    fn run(&self, target: I, n_particles: usize, rng: &RngStream) -> Result<NestedSmcSampler<I>> {
        nsmc_aux_as_proper_sampler(
            target,
            &self.factory,
            &self.proposal_density,
            &self.multiplier,
            n_particles,
            self.precision,
            rng,
        )
    }
}

/// Split index of the stream an inner run is seeded from, inside the
/// ancestor stream handed to `build`.
pub const INNER_RUN_STREAM: u64 = u64::MAX - 1;

/// A step factory whose samplers are whole inner SMC runs.
///
/// The precision passed to `build` is the inner particle count. Errors from
/// the inner run are labelled with `level`.
#[derive(Debug, Clone)]
pub struct NestedSmcFactory<D, R> {
    pub decomposition: D,
    pub runner: R,
    pub level: usize,
}

/// Sampler produced by [`NestedSmcFactory`].
pub struct DecomposedSampler<T: SequentialTarget, D: Decomposition<T>> {
    inner: NestedSmcSampler<D::Inner>,
    decomposition: D,
    _outer: PhantomData<fn() -> T>,
}

impl<T: SequentialTarget, D: Decomposition<T>> DecomposedSampler<T, D> {
    pub fn inner(&self) -> &NestedSmcSampler<D::Inner> {
        &self.inner
    }
}

impl<T, D> ProperSampler for DecomposedSampler<T, D>
where
    T: SequentialTarget,
    D: Decomposition<T>,
{
    type Value = T::State;

    fn log_z(&self) -> LogWeight {
        self.inner.log_z()
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<T::State> {
        let path = self.inner.simulate(rng)?;
        Ok(self.decomposition.assemble(path))
    }
}

impl<T, D, R> StepSamplerFactory<T> for NestedSmcFactory<D, R>
where
    T: SequentialTarget,
    D: Decomposition<T> + Clone,
    R: InnerRunner<D::Inner>,
{
    type Sampler = DecomposedSampler<T, D>;

    fn build(
        &self,
        target: &T,
        prefix: &dyn Path<T::State>,
        precision: usize,
        rng: &mut RngStream,
    ) -> Result<Self::Sampler> {
        let level = self.level;
        let inner_target = self
            .decomposition
            .inner_target(target, prefix)
            .map_err(|e| e.at_level(level))?;
        let inner = self
            .runner
            .run(inner_target, precision, &rng.split(INNER_RUN_STREAM))
            .map_err(|e| e.at_level(level))?;
        Ok(DecomposedSampler {
            inner,
            decomposition: self.decomposition.clone(),
            _outer: PhantomData,
        })
    }
}
