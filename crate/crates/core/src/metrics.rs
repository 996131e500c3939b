//! Accuracy and diagnostic metrics over replicated runs.
//!
//! Estimates are indexed `[replicate][step][component]`. Percentiles use
//! linear interpolation between order statistics: the `p` quantile of `n`
//! sorted values sits at position `p (n - 1)`.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::weight::{effective_resample_size, LogWeight};

/// Per-replicate estimates `x̂[r][k][l]`.
pub type RunEstimates = [Vec<Vec<f64>>];

fn check_shape(estimates: &RunEstimates, truth: &[Vec<f64>]) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::InvalidParameter("no replicates".into()));
    }
    for run in estimates {
        if run.len() != truth.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), got: run.len() });
        }
        for (row, t) in run.iter().zip(truth) {
            if row.len() != t.len() {
                return Err(Error::DimensionMismatch { expected: t.len(), got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite estimate".into()));
            }
        }
    }
    Ok(())
}

/// Equivalent number of iid draws, `1 / mean_r((x̂ - μ)² / σ²)`, per step and
/// component. A zero mean error gives `f64::INFINITY`, written as `exact`.
///
/// A single replicate is accepted and gives the plug-in value for that run.
pub fn ess(estimates: &RunEstimates, mu: &[Vec<f64>], var: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_shape(estimates, mu)?;
    check_shape(std::slice::from_ref(&var.to_vec()), mu)?;
    if var.iter().flatten().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("truth variance must be positive".into()));
    }
    let r = estimates.len() as f64;
    Ok(mu
        .iter()
        .enumerate()
        .map(|(k, mk)| {
            (0..mk.len())
                .map(|l| {
                    let err: f64 = estimates.iter().map(|run| (run[k][l] - mk[l]).powi(2) / var[k][l]).sum::<f64>() / r;
                    if err == 0.0 {
                        f64::INFINITY
                    } else {
                        1.0 / err
                    }
                })
                .collect()
        })
        .collect())
}

/// ESS of variance estimates against the true variances, using the variance
/// `2σ⁴` of a squared centred Gaussian as the normalizer.
pub fn ess_variance(var_estimates: &RunEstimates, var: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let var_of_var: Vec<Vec<f64>> = var.iter().map(|row| row.iter().map(|v| 2.0 * v * v).collect()).collect();
    ess(var_estimates, var, &var_of_var)
}

/// Effective resample size `(Σ w)² / Σ w²`.
pub fn ers(z_values: &[LogWeight]) -> Result<f64> {
    effective_resample_size(z_values)
}

/// Mean squared error over replicates, per step and component.
pub fn mse(estimates: &RunEstimates, mu: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_shape(estimates, mu)?;
    let r = estimates.len() as f64;
    Ok(mu
        .iter()
        .enumerate()
        .map(|(k, mk)| {
            (0..mk.len())
                .map(|l| estimates.iter().map(|run| (run[k][l] - mk[l]).powi(2)).sum::<f64>() / r)
                .collect()
        })
        .collect())
}

/// Linear-interpolation percentile of sorted values, `p` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty set");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Median with a 15-85% band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub median: f64,
    pub lo15: f64,
    pub hi85: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Band {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Band {
            median: percentile_sorted(&s, 0.5),
            lo15: percentile_sorted(&s, 0.15),
            hi85: percentile_sorted(&s, 0.85),
        }
    }
}

/// Per-step median over components of the per-component MSE, with its band.
pub fn mse_summary(estimates: &RunEstimates, mu: &[Vec<f64>]) -> Result<Vec<Band>> {
    Ok(mse(estimates, mu)?.iter().map(|row| Band::of(row)).collect())
}

/// Per-step median over components of any per-component metric.
pub fn median_summary(per_component: &[Vec<f64>]) -> Vec<Band> {
    per_component.iter().map(|row| Band::of(row)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentOrMedian {
    Component(usize),
    Median,
}

impl fmt::Display for ComponentOrMedian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentOrMedian::Component(l) => write!(f, "{l}"),
            ComponentOrMedian::Median => f.write_str("median"),
        }
    }
}

/// One row of the metric CSV. `step` is 1-based; `lo15`/`hi85` are empty
/// for single-component rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub step: usize,
    pub component: ComponentOrMedian,
    pub value: f64,
    pub band: Option<(f64, f64)>,
    pub replicates: usize,
}

pub const METRIC_CSV_HEADER: &str = "metric,step,component_or_median,value,lo15,hi85,replicates";

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "exact".into()
    } else {
        format!("{v:?}")
    }
}

/// Rows for every component of a per-step metric plus a median row per step.
pub fn metric_rows(metric: &str, per_component: &[Vec<f64>], replicates: usize, include_components: bool) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (k, row) in per_component.iter().enumerate() {
        if include_components {
            for (l, v) in row.iter().enumerate() {
                rows.push(MetricRow {
                    metric: metric.into(),
                    step: k + 1,
                    component: ComponentOrMedian::Component(l),
                    value: *v,
                    band: None,
                    replicates,
                });
            }
        }
        let b = Band::of(row);
        rows.push(MetricRow {
            metric: metric.into(),
            step: k + 1,
            component: ComponentOrMedian::Median,
            value: b.median,
            band: Some((b.lo15, b.hi85)),
            replicates,
        });
    }
    rows
}

pub fn write_metric_csv<W: Write>(mut out: W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "{METRIC_CSV_HEADER}")?;
    for r in rows {
        let (lo, hi) = match r.band {
            Some((lo, hi)) => (fmt_value(lo), fmt_value(hi)),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.metric,
            r.step,
            r.component,
            fmt_value(r.value),
            lo,
            hi,
            r.replicates
        )?;
    }
    Ok(())
}
