use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use nsmc_bench::config::ConfigBuilder;
use nsmc_bench::experiment::run_experiment;
use nsmc_bench::output::{run_id, write_outputs};
use nsmc_bench::BenchError;

/// Replicated nested SMC experiments scored against exact oracles.
///
/// Settings come from a preset, then a `key = value` config file, then the
/// flags below; later sources win.
#[derive(Parser, Debug)]
#[command(name = "nsmc-bench", version)]
struct Cli {
    /// Named preset: gauss-d50, gauss-d100, gauss-d200, drought-na, drought-sahel, hmm-test.
    #[arg(long)]
    preset: Option<String>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gaussian-lattice, drought or hmm-test.
    #[arg(long)]
    model: Option<String>,
    /// bootstrap, fa-smc, nsmc or nsis.
    #[arg(long)]
    algo: Option<String>,
    /// Outer particle count.
    #[arg(long = "N")]
    n_particles: Option<usize>,
    /// Inner particle count for nested samplers.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Column-level particles (drought).
    #[arg(long = "N1")]
    n1: Option<usize>,
    /// Site-level particles (drought).
    #[arg(long = "N2")]
    n2: Option<usize>,
    /// Horizon.
    #[arg(long = "n")]
    horizon: Option<usize>,
    /// Lattice dimension.
    #[arg(long = "d")]
    d: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Precipitation CSV (`year,row,col,precip_mm`) for the drought model.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Also run a budget-matched bootstrap filter.
    #[arg(long)]
    compare: bool,
    /// evaluations or time.
    #[arg(long)]
    budget: Option<String>,
    /// Comma-separated metrics: ess, ess_var, mse, ers, evidence, mae, counts.
    #[arg(long)]
    metrics: Option<String>,
    /// Also write per-component rows.
    #[arg(long)]
    components: bool,
}

fn configure(cli: &Cli) -> Result<ConfigBuilder, BenchError> {
    let mut b = ConfigBuilder::default();
    if let Some(p) = &cli.preset {
        b.apply_preset(p)?;
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        b.apply_text(&text)?;
    }
    let strings = [
        ("model", cli.model.clone()),
        ("algo", cli.algo.clone()),
        ("budget", cli.budget.clone()),
        ("metrics", cli.metrics.clone()),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("input", cli.input.as_ref().map(|p| p.display().to_string())),
        ("seed", cli.seed.map(|s| s.to_string())),
    ];
    let counts = [
        ("N", cli.n_particles),
        ("M", cli.m),
        ("N1", cli.n1),
        ("N2", cli.n2),
        ("n", cli.horizon),
        ("d", cli.d),
        ("rows", cli.rows),
        ("cols", cli.cols),
        ("depth", cli.depth),
        ("replicates", cli.replicates),
        ("workers", cli.workers),
    ];
    for (k, v) in strings {
        if let Some(v) = v {
            b.set(k, v)?;
        }
    }
    for (k, v) in counts {
        if let Some(v) = v {
            b.set(k, v.to_string())?;
        }
    }
    if cli.compare {
        b.set("compare", "true")?;
    }
    if cli.components {
        b.set("components", "true")?;
    }
    Ok(b)
}

fn run(cli: &Cli) -> Result<(), BenchError> {
    let cfg = configure(cli)?.build()?;
    let result = run_experiment(&cfg)?;
    let files = write_outputs(&result, &cfg.out)?;
    eprintln!("run {} wrote {} files to {}", run_id(&result), files.len() + 1, cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
