//! Nested sequential importance sampling, and importance sampling squared as
//! its two-step special case.

use crate::engine::{StepProposalDensity, StepSamplerFactory};
use crate::error::{Error, Result};
use crate::nested_is::nis_as_proper_sampler;
use crate::rng::RngStream;
use crate::sampler::{ProperSampler, ProperSamplerFactory};
use crate::target::{Extended, Path, SequentialTarget};
use crate::weight::{log_mean_exp, LogWeight};

/// Output of a nested SIS run. No resampling happens, so every particle keeps
/// its own trajectory.
#[derive(Debug, Clone)]
pub struct SisState<S> {
    pub trajectories: Vec<Vec<S>>,
    pub log_weights: Vec<LogWeight>,
    /// `Z_hat_{q_k}` per step and particle.
    pub inner_log_z: Vec<Vec<LogWeight>>,
    /// Log of the mean final weight.
    pub log_z: LogWeight,
}

/// Nested SIS: `W_k = W_{k-1} · Z_hat_q · [π_k / π_{k-1}] / q_k(X_k | X_{1:k-1})`.
///
/// Particle `i` at step `k` uses the stream `rng.split(k).split(i)` for both
/// construction and simulation, the same layout as the SMC engines.
pub fn run_nested_sis<T, F, Q>(
    target: &T,
    factory: &F,
    proposal_density: &Q,
    n_particles: usize,
    precision: usize,
    rng: &RngStream,
) -> Result<SisState<T::State>>
where
    T: SequentialTarget,
    F: StepSamplerFactory<T>,
    Q: StepProposalDensity<T>,
{
    let n = target.horizon();
    if n == 0 || n_particles == 0 || precision == 0 {
        return Err(Error::InvalidParameter("horizon, N and M must be positive".into()));
    }
    let mut trajectories: Vec<Vec<T::State>> = vec![Vec::with_capacity(n); n_particles];
    let mut log_weights = vec![LogWeight::ONE; n_particles];
    let mut inner_log_z = Vec::with_capacity(n);
    for k in 1..=n {
        let step_rng = rng.split(k as u64);
        let mut zq_step = Vec::with_capacity(n_particles);
        for (i, (path, w)) in trajectories.iter_mut().zip(log_weights.iter_mut()).enumerate() {
            let mut stream = step_rng.split(i as u64);
            let sampler = factory
                .build(target, &*path, precision, &mut stream)
                .map_err(|e| e.at_particle(k, i))?;
            let zq = sampler.log_z();
            zq_step.push(zq);
            let x = sampler.simulate(&mut stream)?;
            let log_q = proposal_density.log_density(target, &*path, &x);
            if log_q == f64::NEG_INFINITY {
                return Err(Error::ZeroProposalDensity { step: k, particle: i });
            }
            let inc = target.log_increment(&Extended::new(&*path, &x));
            let ratio = if inc == f64::NEG_INFINITY {
                LogWeight::ZERO
            } else {
                LogWeight::new(inc - log_q).map_err(|_| Error::NanWeight { index: i })?
            };
            *w = *w * zq * ratio;
            path.push(x);
        }
        inner_log_z.push(zq_step);
    }
    let log_z = log_mean_exp(&log_weights)?;
    Ok(SisState {
        trajectories,
        log_weights,
        inner_log_z,
        log_z,
    })
}

/// A parameter-inference problem with an intractable likelihood
/// `p(y | θ) = ∫ p(y | x, θ) p(x | θ) dx`.
pub trait IsSquaredProblem: Sync {
    type Param: Clone + Send + Sync;
    type Latent: Clone + Send + Sync;

    /// `log p(θ)`.
    fn log_prior(&self, theta: &Self::Param) -> f64;

    /// `log p(y | x, θ) + log p(x | θ)`.
    fn log_joint(&self, theta: &Self::Param, x: &Self::Latent) -> f64;

    /// Draw from the normalized parameter proposal `g`.
    fn sample_param(&self, rng: &mut RngStream) -> Self::Param;

    /// `log g(θ)`, normalized.
    fn log_param_proposal(&self, theta: &Self::Param) -> f64;

    /// Draw from the normalized latent proposal `h(x | y, θ)`.
    fn sample_latent(&self, theta: &Self::Param, rng: &mut RngStream) -> Self::Latent;

    /// `log h(x | y, θ)`, normalized.
    fn log_latent_proposal(&self, theta: &Self::Param, x: &Self::Latent) -> f64;
}

/// State of the two-step target: the parameter at step 1, the latent variable at step 2.
#[derive(Debug, Clone, PartialEq)]
pub enum IsSquaredState<P, X> {
    Param(P),
    Latent(X),
}

impl<P, X> IsSquaredState<P, X> {
    pub fn param(&self) -> &P {
        match self {
            IsSquaredState::Param(p) => p,
            IsSquaredState::Latent(_) => panic!("expected a parameter value"),
        }
    }

    pub fn latent(&self) -> &X {
        match self {
            IsSquaredState::Latent(x) => x,
            IsSquaredState::Param(_) => panic!("expected a latent value"),
        }
    }
}

/// `π_1(θ) = p(θ)` and `π_2(θ, x) = p(θ) p(x | θ) p(y | x, θ)`. Putting the
/// prior alone at step 1 makes the intractable likelihood appear only as the
/// normalizing constant of the step-2 proposal.
struct IsSquaredTarget<'a, P>(&'a P);

impl<P: IsSquaredProblem> SequentialTarget for IsSquaredTarget<'_, P> {
    type State = IsSquaredState<P::Param, P::Latent>;

    fn horizon(&self) -> usize {
        2
    }

    fn log_increment(&self, path: &dyn Path<Self::State>) -> f64 {
        let theta = path.get(0).param();
        match path.len() {
            1 => self.0.log_prior(theta),
            2 => self.0.log_joint(theta, path.get(1).latent()),
            len => panic!("step {len} beyond horizon 2"),
        }
    }
}

struct ParamDraw<'a, P>(&'a P);

impl<P: IsSquaredProblem> ProperSampler for ParamDraw<'_, P> {
    type Value = IsSquaredState<P::Param, P::Latent>;

    fn log_z(&self) -> LogWeight {
        LogWeight::ONE
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<Self::Value> {
        Ok(IsSquaredState::Param(self.0.sample_param(rng)))
    }
}

/// Step 2 sampler: a nested IS run for `q_2(x | θ) = p(y | x, θ) p(x | θ)`.
struct LatentDraw<X>(crate::nested_is::NestedIsSampler<X>);

impl<X: Clone> LatentDraw<X> {
    fn draw<P>(&self, rng: &mut RngStream) -> Result<IsSquaredState<P, X>> {
        Ok(IsSquaredState::Latent(self.0.simulate(rng)?))
    }
}

enum StepDraw<'a, P: IsSquaredProblem> {
    Param(ParamDraw<'a, P>),
    Latent(LatentDraw<P::Latent>),
}

impl<P: IsSquaredProblem> ProperSampler for StepDraw<'_, P> {
    type Value = IsSquaredState<P::Param, P::Latent>;

    fn log_z(&self) -> LogWeight {
        match self {
            StepDraw::Param(s) => s.log_z(),
            StepDraw::Latent(s) => s.0.log_z(),
        }
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<Self::Value> {
        match self {
            StepDraw::Param(s) => s.simulate(rng),
            StepDraw::Latent(s) => s.draw(rng),
        }
    }
}

/// Exact sampler for `h(· | y, θ)` at a fixed θ.
struct LatentProposal<'a, P: IsSquaredProblem> {
    problem: &'a P,
    theta: P::Param,
}

impl<P: IsSquaredProblem> ProperSampler for LatentProposal<'_, P> {
    type Value = P::Latent;

    fn log_z(&self) -> LogWeight {
        LogWeight::ONE
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<P::Latent> {
        Ok(self.problem.sample_latent(&self.theta, rng))
    }
}

struct LatentProposalFactory<'a, P>(&'a P);

/// `h(· | y, θ)` as an unnormalized density handle.
struct LatentDensity<'a, P: IsSquaredProblem> {
    problem: &'a P,
    theta: P::Param,
}

impl<P: IsSquaredProblem> crate::sampler::UnnormalizedDensity<P::Latent> for LatentDensity<'_, P> {
    fn log_density(&self, x: &P::Latent) -> f64 {
        self.problem.log_latent_proposal(&self.theta, x)
    }
}

impl<'a, P: IsSquaredProblem> ProperSamplerFactory<LatentDensity<'a, P>> for LatentProposalFactory<'a, P> {
    type Sampler = LatentProposal<'a, P>;

    fn build(&self, density: &LatentDensity<'a, P>, _precision: usize, _rng: &mut RngStream) -> Result<Self::Sampler> {
        Ok(LatentProposal {
            problem: self.0,
            theta: density.theta.clone(),
        })
    }
}

struct IsSquaredFactory<'a, P>(&'a P);

impl<'a, 'b, P: IsSquaredProblem> StepSamplerFactory<IsSquaredTarget<'b, P>> for IsSquaredFactory<'a, P> {
    type Sampler = StepDraw<'a, P>;

    fn build(
        &self,
        _target: &IsSquaredTarget<'b, P>,
        prefix: &dyn Path<IsSquaredState<P::Param, P::Latent>>,
        precision: usize,
        rng: &mut RngStream,
    ) -> Result<Self::Sampler> {
        if prefix.is_empty() {
            return Ok(StepDraw::Param(ParamDraw(self.0)));
        }
        let theta = prefix.get(0).param().clone();
        let problem = self.0;
        let q2 = {
            let theta = theta.clone();
            move |x: &P::Latent| problem.log_joint(&theta, x)
        };
        let h = LatentDensity { problem, theta };
        let inner = nis_as_proper_sampler(&q2, &h, &LatentProposalFactory(problem), precision, 1, &rng.split(0))?;
        Ok(StepDraw::Latent(LatentDraw(inner)))
    }
}

struct IsSquaredDensity<'a, P>(&'a P);

impl<'b, P: IsSquaredProblem> StepProposalDensity<IsSquaredTarget<'b, P>> for IsSquaredDensity<'_, P> {
    fn log_density(
        &self,
        _target: &IsSquaredTarget<'b, P>,
        prefix: &dyn Path<IsSquaredState<P::Param, P::Latent>>,
        x: &IsSquaredState<P::Param, P::Latent>,
    ) -> f64 {
        match prefix.len() {
            0 => self.0.log_param_proposal(x.param()),
            _ => self.0.log_joint(prefix.get(0).param(), x.latent()),
        }
    }
}

/// Result of [`is_squared`]: parameter draws with weights
/// `W^i = p_hat_M(y | θ^i) p(θ^i) / g(θ^i)`.
#[derive(Debug, Clone)]
pub struct IsSquaredOutput<P, X> {
    pub state: SisState<IsSquaredState<P, X>>,
    /// `log p_hat_M(y | θ^i)`.
    pub log_likelihood_estimates: Vec<LogWeight>,
}

impl<P: Clone, X> IsSquaredOutput<P, X> {
    pub fn params(&self) -> Vec<P> {
        self.state.trajectories.iter().map(|t| t[0].param().clone()).collect()
    }
}

/// IS²: nested SIS over `(θ, x)` with an exact draw from `g` at step 1
/// (`Z_hat_{q_1} = 1`) and an `M`-draw inner importance sampler with proposal
/// `h` at step 2, whose normalizing-constant estimate is `p_hat_M(y | θ)`.
pub fn is_squared<P: IsSquaredProblem>(
    problem: &P,
    n_particles: usize,
    m: usize,
    rng: &RngStream,
) -> Result<IsSquaredOutput<P::Param, P::Latent>> {
    let target = IsSquaredTarget(problem);
    let state = run_nested_sis(
        &target,
        &IsSquaredFactory(problem),
        &IsSquaredDensity(problem),
        n_particles,
        m,
        rng,
    )?;
    let log_likelihood_estimates = state.inner_log_z[1].clone();
    Ok(IsSquaredOutput {
        state,
        log_likelihood_estimates,
    })
}
