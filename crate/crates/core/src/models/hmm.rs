//! Finite-state hidden Markov models as sequential targets, with the exact
//! optimal proposal and the bootstrap (transition prior) proposal.

use crate::engine::{ExactProposal, StepProposalDensity};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampler::ProperSampler;
use crate::target::{Path, SequentialTarget};
use crate::weight::{log_sum_exp, Categorical, LogWeight};

/// `π_k(x_{1:k}) = μ(x_1) g_1(x_1) Π_{t=2..k} A(x_{t-1}, x_t) g_t(x_t)`.
#[derive(Debug, Clone)]
pub struct HmmTarget {
    log_init: Vec<f64>,
    log_transition: Vec<Vec<f64>>,
    log_emission: Vec<Vec<f64>>,
}

impl HmmTarget {
    /// `init` and the rows of `transition` are probability vectors;
    /// `emission[t][s]` is the likelihood of observation `t` under state `s`.
    pub fn new(init: &[f64], transition: &[Vec<f64>], emission: &[Vec<f64>]) -> Result<Self> {
        let s = init.len();
        if s == 0 || emission.is_empty() {
            return Err(Error::InvalidParameter("empty state space or horizon".into()));
        }
        if transition.len() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                got: transition.len(),
            });
        }
        for row in transition.iter().chain(emission) {
            if row.len() != s {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    got: row.len(),
                });
            }
        }
        if init.iter().chain(transition.iter().flatten()).chain(emission.iter().flatten()).any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("probabilities must be finite and nonnegative".into()));
        }
        let ln = |v: &Vec<f64>| v.iter().map(|p| p.ln()).collect::<Vec<_>>();
        Ok(HmmTarget {
            log_init: init.iter().map(|p| p.ln()).collect(),
            log_transition: transition.iter().map(ln).collect(),
            log_emission: emission.iter().map(ln).collect(),
        })
    }

    /// The two-state chain used throughout the tests: sticky transitions and
    /// noisy binary observations `y = (0, 1, 1, 0, 1, ...)` truncated to `n`.
    pub fn two_state_example(n: usize) -> Self {
        let emit = [[0.8, 0.2], [0.3, 0.7]];
        let y = [0usize, 1, 1, 0, 1, 1, 0, 0];
        let emission: Vec<Vec<f64>> = (0..n).map(|t| vec![emit[0][y[t % y.len()]], emit[1][y[t % y.len()]]]).collect();
        HmmTarget::new(&[0.6, 0.4], &[vec![0.85, 0.15], vec![0.25, 0.75]], &emission)
            .expect("valid example")
    }

    pub fn n_states(&self) -> usize {
        self.log_init.len()
    }

    pub fn log_init(&self) -> &[f64] {
        &self.log_init
    }

    pub fn log_transition(&self) -> &[Vec<f64>] {
        &self.log_transition
    }

    pub fn log_emission(&self) -> &[Vec<f64>] {
        &self.log_emission
    }

    /// Linear-scale copies, the form the forward-algorithm oracle takes.
    pub fn probabilities(&self) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let exp = |v: &Vec<f64>| v.iter().map(|l| l.exp()).collect::<Vec<_>>();
        (
            self.log_init.iter().map(|l| l.exp()).collect(),
            self.log_transition.iter().map(exp).collect(),
            self.log_emission.iter().map(exp).collect(),
        )
    }

    fn log_prior_step(&self, prev: Option<usize>, s: usize) -> f64 {
        match prev {
            None => self.log_init[s],
            Some(p) => self.log_transition[p][s],
        }
    }
}

impl SequentialTarget for HmmTarget {
    type State = usize;

    fn horizon(&self) -> usize {
        self.log_emission.len()
    }

    fn log_increment(&self, path: &dyn Path<usize>) -> f64 {
        let k = path.len();
        let s = *path.get(k - 1);
        let prev = (k >= 2).then(|| *path.get(k - 2));
        self.log_prior_step(prev, s) + self.log_emission[k - 1][s]
    }

    fn markov_window(&self) -> Option<usize> {
        Some(1)
    }
}

/// A categorical distribution over states with a fixed reported normalizer.
///
/// All-zero weights give a kernel with `Z = 0` that refuses to simulate, so
/// the engine sees the degeneracy through `log_z`.
#[derive(Debug, Clone)]
pub struct DiscreteKernel {
    log_z: LogWeight,
    table: Option<Categorical>,
}

impl DiscreteKernel {
    /// Kernel proportional to `exp(log_weights)`, reporting `Z = sum exp(log_weights)`.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        let w: Vec<LogWeight> = log_weights.iter().map(|&l| LogWeight::new(l)).collect::<Result<_>>()?;
        let log_z = log_sum_exp(&w)?;
        let table = if log_z.is_zero() { None } else { Some(Categorical::new(&w)?) };
        Ok(DiscreteKernel { log_z, table })
    }
}

impl ProperSampler for DiscreteKernel {
    type Value = usize;

    fn log_z(&self) -> LogWeight {
        self.log_z
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<usize> {
        self.table.as_ref().map(|t| t.sample(rng)).ok_or(Error::DegenerateWeights)
    }
}

/// The optimal proposal `q_k(s) ∝ A(x_{k-1}, s) g_k(s)` with its exact normalizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct HmmOptimal;

impl ExactProposal<HmmTarget> for HmmOptimal {
    type Kernel = DiscreteKernel;

    fn kernel(&self, target: &HmmTarget, prefix: &dyn Path<usize>) -> Result<DiscreteKernel> {
        let k = prefix.len();
        let prev = prefix.last().copied();
        let w: Vec<f64> = (0..target.n_states())
            .map(|s| target.log_prior_step(prev, s) + target.log_emission[k][s])
            .collect();
        DiscreteKernel::from_log_weights(&w)
    }
}

/// The bootstrap proposal: the transition prior, normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HmmPrior;

impl ExactProposal<HmmTarget> for HmmPrior {
    type Kernel = DiscreteKernel;

    fn kernel(&self, target: &HmmTarget, prefix: &dyn Path<usize>) -> Result<DiscreteKernel> {
        let prev = prefix.last().copied();
        let w: Vec<f64> = (0..target.n_states()).map(|s| target.log_prior_step(prev, s)).collect();
        DiscreteKernel::from_log_weights(&w)
    }
}

impl StepProposalDensity<HmmTarget> for HmmPrior {
    fn log_density(&self, target: &HmmTarget, prefix: &dyn Path<usize>, x: &usize) -> f64 {
        target.log_prior_step(prefix.last().copied(), *x)
    }
}
