//! Particle histories: everything a forward pass produced, kept for backward
//! simulation and diagnostics.
//!
//! Paths are not copied. A particle at step `k` stores its value and the index
//! of its ancestor at step `k - 1`; a full prefix is recovered by walking the
//! ancestor chain, so memory stays `O(n N)` values.

use crate::error::{Error, Result};
use crate::target::Path;
use crate::weight::{effective_resample_size, LogWeight};

#[derive(Debug, Clone)]
pub struct ParticleHistory<S> {
    n_particles: usize,
    fully_adapted: bool,
    values: Vec<Vec<S>>,
    ancestors: Vec<Vec<usize>>,
    log_weights: Vec<Vec<LogWeight>>,
    resampling_log_weights: Vec<Vec<LogWeight>>,
    inner_log_z: Vec<Vec<LogWeight>>,
    log_z_trace: Vec<LogWeight>,
}

/// Everything produced by one step of a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepRecord<S> {
    pub values: Vec<S>,
    pub ancestors: Vec<usize>,
    pub log_weights: Vec<LogWeight>,
    pub resampling_log_weights: Vec<LogWeight>,
    pub inner_log_z: Vec<LogWeight>,
    pub log_z: LogWeight,
}

impl<S> ParticleHistory<S> {
    pub(crate) fn new(n_particles: usize, fully_adapted: bool, horizon: usize) -> Self {
        ParticleHistory {
            n_particles,
            fully_adapted,
            values: Vec::with_capacity(horizon),
            ancestors: Vec::with_capacity(horizon),
            log_weights: Vec::with_capacity(horizon),
            resampling_log_weights: Vec::with_capacity(horizon),
            inner_log_z: Vec::with_capacity(horizon),
            log_z_trace: Vec::with_capacity(horizon),
        }
    }

    pub(crate) fn push(&mut self, record: StepRecord<S>) {
        debug_assert_eq!(record.values.len(), self.n_particles);
        debug_assert!(record.ancestors.iter().all(|&a| a < self.n_particles));
        self.values.push(record.values);
        self.ancestors.push(record.ancestors);
        self.log_weights.push(record.log_weights);
        self.resampling_log_weights.push(record.resampling_log_weights);
        self.inner_log_z.push(record.inner_log_z);
        self.log_z_trace.push(record.log_z);
    }

    /// Builds a history from raw per-step arrays. Intended for tests and tooling.
    pub fn from_parts(
        values: Vec<Vec<S>>,
        ancestors: Vec<Vec<usize>>,
        log_weights: Vec<Vec<LogWeight>>,
    ) -> Result<Self> {
        let steps = values.len();
        if steps == 0 || ancestors.len() != steps || log_weights.len() != steps {
            return Err(Error::InvalidParameter("inconsistent history lengths".into()));
        }
        let n = values[0].len();
        for k in 0..steps {
            if values[k].len() != n || ancestors[k].len() != n || log_weights[k].len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: values[k].len(),
                });
            }
            if ancestors[k].iter().any(|&a| a >= n) {
                return Err(Error::InvalidParameter("ancestor index out of range".into()));
            }
        }
        let fully_adapted = log_weights.iter().flatten().all(|w| w.ln() == 0.0);
        Ok(ParticleHistory {
            n_particles: n,
            fully_adapted,
            values,
            ancestors,
            log_weights,
            resampling_log_weights: vec![vec![LogWeight::ONE; n]; steps],
            inner_log_z: vec![vec![LogWeight::ONE; n]; steps],
            log_z_trace: vec![LogWeight::ONE; steps],
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.values.len()
    }

    /// True when every stored importance weight is one.
    pub fn is_fully_adapted(&self) -> bool {
        self.fully_adapted
    }

    pub fn values(&self, step: usize) -> &[S] {
        &self.values[step]
    }

    /// Ancestor indices of the particles at `step`, into the particles at `step - 1`
    /// (into the dummy initial set at step 0).
    pub fn ancestors(&self, step: usize) -> &[usize] {
        &self.ancestors[step]
    }

    pub fn log_weights(&self, step: usize) -> &[LogWeight] {
        &self.log_weights[step]
    }

    /// Weights used to resample the ancestors of `step` (`ν̂ W` of the previous step).
    pub fn resampling_log_weights(&self, step: usize) -> &[LogWeight] {
        &self.resampling_log_weights[step]
    }

    /// Inner normalizing-constant estimates `Z_hat_q` at `step`, indexed by candidate ancestor.
    pub fn inner_log_z(&self, step: usize) -> &[LogWeight] {
        &self.inner_log_z[step]
    }

    /// Running normalizing-constant estimates, one per completed step.
    pub fn log_z_trace(&self) -> &[LogWeight] {
        &self.log_z_trace
    }

    pub fn log_z(&self) -> LogWeight {
        *self.log_z_trace.last().expect("history has at least one step")
    }

    /// Effective resample size of the resampling weights at `step`.
    pub fn ers(&self, step: usize) -> Result<f64> {
        effective_resample_size(&self.resampling_log_weights[step])
    }

    /// View of the path ending in particle `index` at `step`.
    pub fn lineage(&self, step: usize, index: usize) -> Lineage<'_, S> {
        Lineage::new(self, step + 1, index, &[], false)
    }

    /// Owned copy of the path ending in particle `index` at `step`.
    pub fn trajectory(&self, step: usize, index: usize) -> Vec<S>
    where
        S: Clone,
    {
        let mut out = Vec::with_capacity(step + 1);
        let mut i = index;
        for k in (0..=step).rev() {
            out.push(self.values[k][i].clone());
            i = self.ancestors[k][i];
        }
        out.reverse();
        out
    }

    /// Index at `step` of the ancestor of particle `index` at `from_step >= step`.
    pub fn ancestor_at(&self, from_step: usize, index: usize, step: usize) -> usize {
        let mut i = index;
        for k in ((step + 1)..=from_step).rev() {
            i = self.ancestors[k][i];
        }
        i
    }
}

/// A path made of a stored prefix (an ancestor chain in a history) followed by
/// a tail of values held elsewhere. The tail may be stored in reverse order.
pub struct Lineage<'a, S> {
    history: &'a ParticleHistory<S>,
    prefix_len: usize,
    index: usize,
    tail: &'a [S],
    tail_reversed: bool,
}

impl<'a, S> Lineage<'a, S> {
    /// `prefix_len` steps of history ending at particle `index` of step
    /// `prefix_len - 1`, then `tail`. With `prefix_len = 0` only the tail is used.
    pub fn new(
        history: &'a ParticleHistory<S>,
        prefix_len: usize,
        index: usize,
        tail: &'a [S],
        tail_reversed: bool,
    ) -> Self {
        debug_assert!(prefix_len <= history.steps());
        Lineage {
            history,
            prefix_len,
            index,
            tail,
            tail_reversed,
        }
    }
}

impl<S> Path<S> for Lineage<'_, S> {
    fn len(&self) -> usize {
        self.prefix_len + self.tail.len()
    }

    fn get(&self, t: usize) -> &S {
        if t < self.prefix_len {
            let mut step = self.prefix_len - 1;
            let mut i = self.index;
            while step > t {
                i = self.history.ancestors[step][i];
                step -= 1;
            }
            &self.history.values[t][i]
        } else {
            let u = t - self.prefix_len;
            if self.tail_reversed {
                &self.tail[self.tail.len() - 1 - u]
            } else {
                &self.tail[u]
            }
        }
    }
}
