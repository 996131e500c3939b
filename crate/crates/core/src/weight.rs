//! Log-space weights and the categorical / multinomial primitives built on them.
//!
//! Every weight in the crate is carried as its natural logarithm so that products
//! of a few thousand potentials neither underflow nor overflow. A weight of zero
//! is represented by `-inf`; NaN is rejected at construction.

use std::fmt;
use std::ops::{Div, Mul};

use rand::Rng;

use crate::error::{Error, Result};

/// Logarithm of a nonnegative weight.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
#[repr(transparent)]
pub struct LogWeight(f64);

impl LogWeight {
    /// Weight zero.
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);
    /// Weight one.
    pub const ONE: LogWeight = LogWeight(0.0);

    /// Wraps a log-weight, rejecting NaN.
    pub fn new(log_value: f64) -> Result<Self> {
        if log_value.is_nan() {
            return Err(Error::NanWeight { index: 0 });
        }
        Ok(LogWeight(log_value))
    }

    /// Wraps a log-weight without the NaN check. The caller guarantees `log_value` is not NaN.
    #[inline]
    pub(crate) fn from_ln_unchecked(log_value: f64) -> Self {
        debug_assert!(!log_value.is_nan());
        LogWeight(log_value)
    }

    /// Builds a log-weight from a linear-scale weight, which must be nonnegative.
    pub fn from_linear(weight: f64) -> Result<Self> {
        if weight.is_nan() || weight < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "linear weight must be nonnegative, got {weight}"
            )));
        }
        Ok(LogWeight(weight.ln()))
    }

    #[inline]
    pub fn ln(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn linear(self) -> f64 {
        self.0.exp()
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl fmt::Debug for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogWeight({})", self.0)
    }
}

impl fmt::Display for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl Mul for LogWeight {
    type Output = LogWeight;
    fn mul(self, rhs: LogWeight) -> LogWeight {
        // 0 * anything stays 0, including 0 * inf which would otherwise give NaN
        if self.is_zero() || rhs.is_zero() {
            return LogWeight::ZERO;
        }
        LogWeight(self.0 + rhs.0)
    }
}

impl Div for LogWeight {
    type Output = LogWeight;
    fn div(self, rhs: LogWeight) -> LogWeight {
        assert!(!rhs.is_zero(), "division by a zero weight");
        if self.is_zero() {
            return LogWeight::ZERO;
        }
        LogWeight(self.0 - rhs.0)
    }
}

fn check_weights(values: &[LogWeight]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyWeights);
    }
    let mut max = f64::NEG_INFINITY;
    for (index, w) in values.iter().enumerate() {
        let v = w.ln();
        if v.is_nan() {
            return Err(Error::NanWeight { index });
        }
        if v == f64::INFINITY {
            return Err(Error::InvalidParameter(format!("infinite weight at index {index}")));
        }
        if v > max {
            max = v;
        }
    }
    Ok(max)
}

/// `log(sum(exp(v_i)))` with max subtraction. Returns zero weight iff every input is zero.
pub fn log_sum_exp(values: &[LogWeight]) -> Result<LogWeight> {
    let max = check_weights(values)?;
    if max == f64::NEG_INFINITY {
        return Ok(LogWeight::ZERO);
    }
    let sum: f64 = values.iter().map(|w| (w.ln() - max).exp()).sum();
    Ok(LogWeight(max + sum.ln()))
}

/// `log(mean(exp(v_i)))`.
pub fn log_mean_exp(values: &[LogWeight]) -> Result<LogWeight> {
    let total = log_sum_exp(values)?;
    if total.is_zero() {
        return Ok(total);
    }
    Ok(LogWeight(total.ln() - (values.len() as f64).ln()))
}

/// Normalized probabilities `exp(w_i) / sum exp(w_l)`.
pub fn normalize(values: &[LogWeight]) -> Result<Vec<f64>> {
    let total = log_sum_exp(values)?;
    if total.is_zero() {
        return Err(Error::DegenerateWeights);
    }
    Ok(values.iter().map(|w| (w.ln() - total.ln()).exp()).collect())
}

/// A categorical distribution prepared for repeated draws.
#[derive(Debug, Clone)]
pub struct Categorical {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    pub fn new(weights: &[LogWeight]) -> Result<Self> {
        let max = check_weights(weights)?;
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights);
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, w) in weights.iter().enumerate() {
            let p = (w.ln() - max).exp();
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            cumulative.push(acc);
        }
        Ok(Categorical {
            cumulative,
            last_positive,
        })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Draws one index. Consumes exactly one `f64` from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.cumulative[self.cumulative.len() - 1];
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.last_positive)
    }
}

/// Draws a single index with probability proportional to `exp(weights[i])`.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[LogWeight]) -> Result<usize> {
    Ok(Categorical::new(weights)?.sample(rng))
}

/// Multinomial offspring counts: `n` independent categorical draws tallied per index.
pub fn resample_multinomial<R: Rng + ?Sized>(
    rng: &mut R,
    weights: &[LogWeight],
    n: usize,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidParameter("resample size must be positive".into()));
    }
    let table = Categorical::new(weights)?;
    let mut counts = vec![0usize; weights.len()];
    for _ in 0..n {
        counts[table.sample(rng)] += 1;
    }
    Ok(counts)
}

/// Sorted expansion of offspring counts: `counts[j]` copies of `j`, in order of `j`.
pub fn ancestor_indices_from_counts(counts: &[usize]) -> Vec<usize> {
    let total = counts.iter().sum();
    let mut out = Vec::with_capacity(total);
    for (j, &m) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(j, m));
    }
    out
}

/// Effective resample size `(sum w)^2 / sum w^2`, invariant to rescaling the weights.
pub fn effective_resample_size(weights: &[LogWeight]) -> Result<f64> {
    let p = normalize(weights)?;
    let sq: f64 = p.iter().map(|x| x * x).sum();
    Ok((1.0 / sq).clamp(1.0, weights.len() as f64))
}
