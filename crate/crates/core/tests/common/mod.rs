#![allow(dead_code)]

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Asserts `|mean - expected| <= k · se`.
pub fn assert_within_se(xs: &[f64], expected: f64, k: f64, what: &str) {
    let (m, se) = mean_se(xs);
    assert!(
        (m - expected).abs() <= k * se,
        "{what}: mean {m} vs expected {expected}, se {se}"
    );
}

/// Pearson χ² statistic of observed counts against expected probabilities.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * total as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// log-sum-exp for the oracles, kept apart from the library's version.
pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
