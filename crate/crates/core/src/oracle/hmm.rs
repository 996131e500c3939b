//! The forward algorithm for finite-state hidden Markov models.

use crate::error::{Error, Result};

/// Filtering distributions `p(x_k | y_{1:k})` and the log likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub filter: Vec<Vec<f64>>,
    /// `log p(y_{1:k})` for every `k`.
    pub log_evidence: Vec<f64>,
}

impl ForwardResult {
    pub fn log_likelihood(&self) -> f64 {
        *self.log_evidence.last().expect("at least one step")
    }
}

fn check_distribution(name: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::NotStochastic(format!("{name} has a negative or NaN entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::NotStochastic(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// Forward recursion with per-step likelihood vectors `likelihood[k][s] = p(y_k | x_k = s)`.
///
/// Each step is normalized and its normalizer accumulated in log space.
pub fn forward_with_likelihoods(init: &[f64], transition: &[Vec<f64>], likelihood: &[Vec<f64>]) -> Result<ForwardResult> {
    let s = init.len();
    check_distribution("initial distribution", init)?;
    if transition.len() != s {
        return Err(Error::DimensionMismatch { expected: s, got: transition.len() });
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != s {
            return Err(Error::DimensionMismatch { expected: s, got: row.len() });
        }
        check_distribution(&format!("transition row {i}"), row)?;
    }
    if likelihood.is_empty() {
        return Err(Error::InvalidParameter("no observations".into()));
    }
    let mut filter = Vec::with_capacity(likelihood.len());
    let mut log_evidence = Vec::with_capacity(likelihood.len());
    let mut log_z = 0.0;
    let mut prev: Option<Vec<f64>> = None;
    for lik in likelihood {
        if lik.len() != s {
            return Err(Error::DimensionMismatch { expected: s, got: lik.len() });
        }
        let predicted: Vec<f64> = match &prev {
            None => init.to_vec(),
            Some(p) => (0..s).map(|j| (0..s).map(|i| p[i] * transition[i][j]).sum()).collect(),
        };
        let mut alpha: Vec<f64> = predicted.iter().zip(lik).map(|(p, l)| p * l).collect();
        let c: f64 = alpha.iter().sum();
        if !(c > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        alpha.iter_mut().for_each(|a| *a /= c);
        log_z += c.ln();
        log_evidence.push(log_z);
        filter.push(alpha.clone());
        prev = Some(alpha);
    }
    Ok(ForwardResult { filter, log_evidence })
}

/// Forward recursion with an emission matrix `emission[s][o] = p(y = o | x = s)`
/// and observed symbols `y`.
pub fn hmm_forward(transition: &[Vec<f64>], emission: &[Vec<f64>], init: &[f64], y: &[usize]) -> Result<ForwardResult> {
    if emission.len() != init.len() {
        return Err(Error::DimensionMismatch { expected: init.len(), got: emission.len() });
    }
    for (i, row) in emission.iter().enumerate() {
        check_distribution(&format!("emission row {i}"), row)?;
    }
    let likelihood: Vec<Vec<f64>> = y
        .iter()
        .map(|&o| {
            emission
                .iter()
                .map(|row| row.get(o).copied().ok_or_else(|| Error::InvalidParameter(format!("symbol {o} out of range"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    forward_with_likelihoods(init, transition, &likelihood)
}
