//! Exact filtering by enumerating a finite per-step state space.

use crate::error::{Error, Result};
use crate::target::{MarkovPath, SequentialTarget};

/// Largest per-step state space accepted.
pub const ENUMERATION_LIMIT: usize = 4096;

/// Filtering distributions over the listed states and cumulative log evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedFilter {
    pub filter: Vec<Vec<f64>>,
    pub log_evidence: Vec<f64>,
}

/// Exact filter for a target whose increments depend on the previous state
/// only and whose states at every step range over `states`.
///
/// Costs `O(n S^2)` increment evaluations.
pub fn enumerate_filter<T: SequentialTarget>(target: &T, states: &[T::State]) -> Result<EnumeratedFilter> {
    let s = states.len();
    if s > ENUMERATION_LIMIT {
        return Err(Error::EnumerationInfeasible { states: s, limit: ENUMERATION_LIMIT });
    }
    if s == 0 {
        return Err(Error::InvalidParameter("empty state space".into()));
    }
    let n = target.horizon();
    if n > 1 && target.markov_window() != Some(1) {
        return Err(Error::InvalidParameter("enumeration needs a first-order Markov target".into()));
    }
    let mut filter = Vec::with_capacity(n);
    let mut log_evidence = Vec::with_capacity(n);
    let mut log_z = 0.0;
    let mut prev: Option<Vec<f64>> = None;
    for k in 1..=n {
        let mut log_alpha = vec![f64::NEG_INFINITY; s];
        for (j, x) in states.iter().enumerate() {
            log_alpha[j] = match &prev {
                None => target.log_increment(&MarkovPath::new(1, None, x)),
                Some(p) => {
                    let terms: Vec<f64> = states
                        .iter()
                        .zip(p)
                        .filter(|(_, &w)| w > 0.0)
                        .map(|(u, &w)| w.ln() + target.log_increment(&MarkovPath::new(k, Some(u), x)))
                        .collect();
                    log_sum(&terms)
                }
            };
        }
        let c = log_sum(&log_alpha);
        if c == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights);
        }
        log_z += c;
        let alpha: Vec<f64> = log_alpha.iter().map(|v| (v - c).exp()).collect();
        log_evidence.push(log_z);
        filter.push(alpha.clone());
        prev = Some(alpha);
    }
    Ok(EnumeratedFilter { filter, log_evidence })
}

fn log_sum(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::hmm::HmmTarget;
    use crate::oracle::hmm::forward_with_likelihoods;
    use crate::target::Path;

    #[test]
    fn matches_forward_algorithm_on_an_hmm() {
        let t = HmmTarget::two_state_example(5);
        let (init, a, e) = t.probabilities();
        let fwd = forward_with_likelihoods(&init, &a, &e).unwrap();
        let en = enumerate_filter(&t, &[0usize, 1]).unwrap();
        for k in 0..5 {
            assert!((fwd.log_evidence[k] - en.log_evidence[k]).abs() < 1e-12);
            for s in 0..2 {
                assert!((fwd.filter[k][s] - en.filter[k][s]).abs() < 1e-12);
            }
        }
    }

    struct Flat;
    impl SequentialTarget for Flat {
        type State = u8;
        fn horizon(&self) -> usize {
            3
        }
        fn log_increment(&self, _path: &dyn Path<u8>) -> f64 {
            0.0
        }
        fn markov_window(&self) -> Option<usize> {
            Some(1)
        }
    }

    #[test]
    fn uniform_potentials_give_uniform_filters() {
        let states: Vec<u8> = (0..4).collect();
        let f = enumerate_filter(&Flat, &states).unwrap();
        for row in &f.filter {
            for p in row {
                assert!((p - 0.25).abs() < 1e-15);
            }
        }
        assert!((f.log_evidence[2] - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_state_spaces() {
        let states = vec![0u8; ENUMERATION_LIMIT + 1];
        assert!(matches!(enumerate_filter(&Flat, &states), Err(Error::EnumerationInfeasible { .. })));
    }
}
