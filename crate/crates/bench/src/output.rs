//! CSV and manifest output. Every CSV opens with `# manifest=<run_id>`, and
//! `manifest.json` in the same directory carries that id.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use nsmc::metrics::{ess, ess_variance, metric_rows, mse, write_metric_csv, MetricRow};
use nsmc::models::drought::{write_marginals_csv, DroughtMarginals};

use crate::budget::BudgetRecord;
use crate::config::Model;
use crate::experiment::{AlgoRun, ExperimentResult, Oracle};
use crate::BenchError;

/// Thresholds for the per-year count of sites in drought.
pub const DROUGHT_THRESHOLDS: &[f64] = &[0.5, 0.7, 0.9];

/// Build identifier: `NSMC_GIT_DESCRIBE` at compile time, else the package version.
pub fn version() -> &'static str {
    option_env!("NSMC_GIT_DESCRIBE").unwrap_or(env!("CARGO_PKG_VERSION"))
}

/// SHA-256 over the version, the config echo and the input file hash.
pub fn run_id(result: &ExperimentResult) -> String {
    let mut h = Sha256::new();
    h.update(version().as_bytes());
    h.update(b"\n");
    h.update(result.config.echo().as_bytes());
    h.update(b"\n");
    h.update(result.input_sha256.as_deref().unwrap_or("").as_bytes());
    format!("{:x}", h.finalize())
}

#[derive(Serialize)]
struct RunTiming<'a> {
    algorithm: &'a str,
    particles: usize,
    replicate_wall_secs: &'a [f64],
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    version: &'a str,
    config: String,
    input_sha256: Option<&'a str>,
    budget: Option<&'a BudgetRecord>,
    percentiles: &'static str,
    metrics: &'a [String],
    timing: Vec<RunTiming<'a>>,
    total_wall_secs: f64,
    files: &'a [String],
}

/// `[k][r]` view of a per-replicate, per-step series.
fn by_step(per_rep: impl Fn(usize) -> Vec<f64>, reps: usize, steps: usize) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (0..reps).map(per_rep).collect();
    (0..steps).map(|k| cols.iter().map(|c| c[k]).collect()).collect()
}

fn mean_abs_error(run: &AlgoRun, mu: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let r = run.replicates.len() as f64;
    mu.iter()
        .enumerate()
        .map(|(k, row)| {
            row.iter()
                .enumerate()
                .map(|(l, m)| run.replicates.iter().map(|o| (o.means[k][l] - m).abs()).sum::<f64>() / r)
                .collect()
        })
        .collect()
}

fn rows_for(
    metric: &str,
    run: &AlgoRun,
    oracle: Option<&Oracle>,
    components: bool,
) -> Result<Option<Vec<MetricRow>>, BenchError> {
    let reps = run.replicates.len();
    let steps = run.replicates[0].means.len();
    let name = format!("{metric}:{}", run.label);
    let means: Vec<Vec<Vec<f64>>> = run.replicates.iter().map(|o| o.means.clone()).collect();
    let per = match (metric, oracle) {
        ("ers", _) => by_step(|r| run.replicates[r].ers.clone(), reps, steps),
        ("ess", Some(o)) => ess(&means, &o.mu, &o.var)?,
        ("mse", Some(o)) => mse(&means, &o.mu)?,
        ("mae", Some(o)) => mean_abs_error(run, &o.mu),
        ("ess_var", Some(o)) => {
            let (Some(truth), Some(vars)) = (&o.state_var, run.replicates.iter().map(|r| r.vars.clone()).collect::<Option<Vec<_>>>())
            else {
                return Ok(None);
            };
            ess_variance(&vars, truth)?
        }
        ("evidence", Some(o)) => by_step(
            |r| run.replicates[r].log_z.iter().zip(&o.log_evidence).map(|(a, b)| (a - b).exp()).collect(),
            reps,
            steps,
        ),
        _ => return Ok(None),
    };
    // for ers and evidence the component column is the replicate index
    Ok(Some(metric_rows(&name, &per, reps, components)))
}

fn write_with_header(path: &Path, run_id: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), BenchError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# manifest={run_id}")?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Averages the marginals of every replicate.
fn mean_marginals(run: &AlgoRun, rows: usize, cols: usize) -> DroughtMarginals {
    let r = run.replicates.len() as f64;
    let steps = run.replicates[0].means.len();
    let p = (0..steps)
        .map(|k| {
            (0..rows * cols)
                .map(|l| run.replicates.iter().map(|o| o.means[k][l]).sum::<f64>() / r)
                .collect()
        })
        .collect();
    DroughtMarginals {
        rows,
        cols,
        p,
        log_z: Vec::new(),
        ers: Vec::new(),
    }
}

/// Writes the metric CSVs and `manifest.json` into `dir`; returns the file names.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(dir)?;
    let id = run_id(result);
    let cfg = &result.config;
    let mut files = Vec::new();
    for metric in &result.metrics {
        if metric == "counts" {
            continue;
        }
        let mut rows = Vec::new();
        for run in &result.runs {
            if let Some(r) = rows_for(metric, run, result.oracle.as_ref(), cfg.components)? {
                rows.extend(r);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let name = format!("{metric}.csv");
        write_with_header(&dir.join(&name), &id, |w| write_metric_csv(w, &rows))?;
        files.push(name);
    }
    if cfg.model == Model::Drought {
        let m = mean_marginals(&result.runs[0], cfg.rows, cfg.cols);
        let name = "marginals.csv".to_string();
        write_with_header(&dir.join(&name), &id, |w| write_marginals_csv(w, &result.years, &m, DROUGHT_THRESHOLDS))?;
        files.push(name);
    }

    let manifest = Manifest {
        run_id: &id,
        version: version(),
        config: cfg.echo(),
        input_sha256: result.input_sha256.as_deref(),
        budget: result.budget.as_ref(),
        percentiles: "linear interpolation at position p*(R-1) of the sorted values; bands are the 15th and 85th percentiles",
        metrics: &result.metrics,
        timing: result
            .runs
            .iter()
            .map(|r| RunTiming {
                algorithm: &r.label,
                particles: r.particles,
                replicate_wall_secs: &r.wall_secs,
            })
            .collect(),
        total_wall_secs: result.total_wall_secs,
        files: &files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| BenchError::Io(e.into()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(files.into_iter().map(|f| dir.join(f)).collect())
}

/// Run id recorded on the first line of a CSV written by [`write_outputs`].
pub fn csv_manifest_id(path: &Path) -> Result<Option<String>, BenchError> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# manifest="))
        .map(str::to_string))
}
