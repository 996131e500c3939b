//! Running replicated experiments.

use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use nsmc::engine::{run_fully_adapted_smc, run_nested_smc_aux, run_nested_smc_fa, ExactFactory, StepProposalDensity, UnitMultiplier};
use nsmc::history::ParticleHistory;
use nsmc::models::drought::{
    all_grids, estimate_site_params, read_precip_csv, synthetic_params, synthetic_precipitation, three_level_nsmc,
    DroughtParams, DroughtTarget, PrecipGrid,
};
use nsmc::models::hmm::{HmmOptimal, HmmPrior, HmmTarget};
use nsmc::models::lattice::{
    lattice_nested_factory, simulate_generating_ssm, GaussianLatticeParams, LatticeBootstrap, LatticeOptimal,
    LatticeTarget,
};
use nsmc::oracle::enumerate::enumerate_filter;
use nsmc::oracle::gaussian::{gaussian_filter, DENSE_LIMIT};
use nsmc::oracle::hmm::forward_with_likelihoods;
use nsmc::sis::run_nested_sis;
use nsmc::target::{Prefix, SequentialTarget};
use nsmc::weight::{effective_resample_size, log_mean_exp, normalize};
use nsmc::{LogWeight, RngStream};

use crate::budget::{matched_budget, time_matched_particles, BudgetRecord};
use crate::config::{Algo, BudgetMode, ExperimentConfig, Model};
use crate::BenchError;

/// Largest drought grid whose filter is enumerated for the oracle.
pub const DROUGHT_ORACLE_SITES: usize = 10;

/// One replicate's output from one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutput {
    /// Filtering mean estimates `[k][component]`.
    pub means: Vec<Vec<f64>>,
    /// Filtering variance estimates `[k][component]`, when the state is continuous.
    pub vars: Option<Vec<Vec<f64>>>,
    /// ERS of the weights that choose the ancestors, per step.
    pub ers: Vec<f64>,
    /// `log Z_hat_k` per step.
    pub log_z: Vec<f64>,
}

/// Every replicate of one algorithm.
#[derive(Debug, Clone)]
pub struct AlgoRun {
    pub label: String,
    pub particles: usize,
    pub replicates: Vec<ReplicateOutput>,
    pub wall_secs: Vec<f64>,
}

/// Exact filtering quantities.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub mu: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    /// Exact variances of the quantities whose variance is estimated; only for continuous states.
    pub state_var: Option<Vec<Vec<f64>>>,
    pub log_evidence: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<AlgoRun>,
    pub oracle: Option<Oracle>,
    pub budget: Option<BudgetRecord>,
    /// Year labels for drought output.
    pub years: Vec<i64>,
    /// SHA-256 of the drought input file, when one was read.
    pub input_sha256: Option<String>,
    pub metrics: Vec<String>,
    pub total_wall_secs: f64,
}

enum Problem {
    Lattice(LatticeTarget),
    Hmm(HmmTarget),
    Drought { params: DroughtParams, precip: PrecipGrid },
}

fn data_stream(cfg: &ExperimentConfig) -> RngStream {
    RngStream::from_seed(cfg.seed).split(0)
}

/// Stream for replicate `r`; the main algorithm uses `.split(0)`, the comparator `.split(1)`.
pub fn replicate_stream(seed: u64, r: usize) -> RngStream {
    RngStream::from_seed(seed).split(1).split(r as u64)
}

fn build_problem(cfg: &ExperimentConfig) -> Result<(Problem, Vec<i64>, Option<String>), BenchError> {
    match cfg.model {
        Model::GaussianLattice => {
            let params = GaussianLatticeParams::with_default_theta(cfg.d)?;
            let (_, y) = simulate_generating_ssm(&params, cfg.n, &mut data_stream(cfg))?;
            Ok((Problem::Lattice(LatticeTarget::new(params, y)?), (1..=cfg.n as i64).collect(), None))
        }
        Model::HmmTest => {
            if cfg.n > 8 {
                return Err(BenchError::Config("hmm-test has 8 observations; n must be at most 8".into()));
            }
            Ok((Problem::Hmm(HmmTarget::two_state_example(cfg.n)), (1..=cfg.n as i64).collect(), None))
        }
        Model::Drought => {
            let (precip, digest) = match &cfg.input {
                Some(path) => {
                    let bytes = std::fs::read(path)?;
                    let digest = format!("{:x}", Sha256::digest(&bytes));
                    let precip = read_precip_csv(BufReader::new(File::open(path)?))?;
                    if precip.rows != cfg.rows || precip.cols != cfg.cols {
                        return Err(BenchError::Config(format!(
                            "input grid is {}x{}, config says {}x{}",
                            precip.rows, precip.cols, cfg.rows, cfg.cols
                        )));
                    }
                    if precip.n_years() < cfg.n {
                        return Err(BenchError::Config(format!(
                            "input has {} years, n = {}",
                            precip.n_years(),
                            cfg.n
                        )));
                    }
                    (precip, Some(digest))
                }
                None => {
                    let truth = synthetic_params(cfg.rows, cfg.cols)?;
                    let (_, precip) = synthetic_precipitation(&truth, cfg.n.max(2), 3, &mut data_stream(cfg))?;
                    (precip, None)
                }
            };
            let params = estimate_site_params(&precip)?;
            let precip = precip.truncated(cfg.n);
            let years = precip.years.clone();
            Ok((Problem::Drought { params, precip }, years, digest))
        }
    }
}

fn available_metrics(cfg: &ExperimentConfig) -> (Vec<&'static str>, Vec<&'static str>) {
    match cfg.model {
        Model::GaussianLattice => (vec!["ers"], vec!["ess", "ess_var", "mse", "evidence"]),
        Model::HmmTest => (vec!["ers"], vec!["ess", "mse", "evidence"]),
        Model::Drought => (vec!["ers", "counts"], vec!["ess", "mse", "mae", "evidence"]),
    }
}

fn oracle_feasible(cfg: &ExperimentConfig) -> bool {
    match cfg.model {
        Model::GaussianLattice => cfg.d <= DENSE_LIMIT,
        Model::HmmTest => true,
        Model::Drought => cfg.rows * cfg.cols <= DROUGHT_ORACLE_SITES,
    }
}

/// Requested metrics, or every available one. Oracle-backed metrics on a
/// problem without a feasible oracle are an error naming what is available.
pub fn resolve_metrics(cfg: &ExperimentConfig) -> Result<Vec<String>, BenchError> {
    let (always, with_oracle) = available_metrics(cfg);
    let feasible = oracle_feasible(cfg);
    let mut available: Vec<&str> = always.clone();
    if feasible {
        available.extend(&with_oracle);
    }
    match &cfg.metrics {
        None => Ok(available.iter().map(|s| s.to_string()).collect()),
        Some(req) => {
            for m in req {
                if with_oracle.contains(&m.as_str()) && !feasible {
                    return Err(BenchError::OracleInfeasible(format!(
                        "metric {m:?} needs an exact oracle, which is infeasible for this problem size; available metrics: {}",
                        available.join(", ")
                    )));
                }
                if !available.contains(&m.as_str()) {
                    return Err(BenchError::Config(format!(
                        "metric {m:?} is not defined for model {}; available metrics: {}",
                        cfg.model,
                        available.join(", ")
                    )));
                }
            }
            Ok(req.clone())
        }
    }
}

fn compute_oracle(problem: &Problem) -> Result<Oracle, BenchError> {
    match problem {
        Problem::Lattice(t) => {
            let f = gaussian_filter(t.params(), t.observations())?;
            Ok(Oracle {
                mu: f.mu,
                var: f.var.clone(),
                state_var: Some(f.var),
                log_evidence: f.log_evidence,
            })
        }
        Problem::Hmm(t) => {
            let (init, a, e) = t.probabilities();
            let f = forward_with_likelihoods(&init, &a, &e)?;
            let mu: Vec<Vec<f64>> = f.filter.iter().map(|p| vec![p[1]]).collect();
            Ok(Oracle {
                var: bernoulli_var(&mu),
                mu,
                state_var: None,
                log_evidence: f.log_evidence,
            })
        }
        Problem::Drought { params, precip } => {
            let target = DroughtTarget::new(params.clone(), precip.y.clone())?;
            let grids = all_grids(params.rows, params.cols)?;
            let f = enumerate_filter(&target, &grids)?;
            let mu: Vec<Vec<f64>> = f
                .filter
                .iter()
                .map(|probs| {
                    let mut m = vec![0.0; params.sites()];
                    for (g, p) in grids.iter().zip(probs) {
                        for (j, col) in g.iter().enumerate() {
                            for (i, &v) in col.iter().enumerate() {
                                m[params.index(i, j)] += p * f64::from(v);
                            }
                        }
                    }
                    m
                })
                .collect();
            Ok(Oracle {
                var: bernoulli_var(&mu),
                mu,
                state_var: None,
                log_evidence: f.log_evidence,
            })
        }
    }
}

fn bernoulli_var(mu: &[Vec<f64>]) -> Vec<Vec<f64>> {
    mu.iter().map(|r| r.iter().map(|p| p * (1.0 - p)).collect()).collect()
}

/// Weighted means and variances of vector particles.
fn vector_moments(values: &[Vec<f64>], probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = values[0].len();
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    for (x, &p) in values.iter().zip(probs) {
        for l in 0..d {
            mean[l] += p * x[l];
            second[l] += p * x[l] * x[l];
        }
    }
    let var = mean.iter().zip(&second).map(|(m, s)| (s - m * m).max(0.0)).collect();
    (mean, var)
}

fn step_probs(h: &ParticleHistory<impl Clone>, k: usize) -> Result<Vec<f64>, BenchError> {
    if h.is_fully_adapted() {
        Ok(vec![1.0 / h.n_particles() as f64; h.n_particles()])
    } else {
        Ok(normalize(h.log_weights(k))?)
    }
}

/// ERS of the weights carried into the next resampling: `Z_q` values for
/// fully adapted runs, importance weights otherwise.
fn history_ers<S>(h: &ParticleHistory<S>) -> Result<Vec<f64>, BenchError> {
    (0..h.steps())
        .map(|k| {
            if h.is_fully_adapted() {
                Ok(h.ers(k)?)
            } else {
                Ok(effective_resample_size(h.log_weights(k))?)
            }
        })
        .collect()
}

fn lattice_output(h: &ParticleHistory<Vec<f64>>) -> Result<ReplicateOutput, BenchError> {
    let mut means = Vec::with_capacity(h.steps());
    let mut vars = Vec::with_capacity(h.steps());
    for k in 0..h.steps() {
        let (m, v) = vector_moments(h.values(k), &step_probs(h, k)?);
        means.push(m);
        vars.push(v);
    }
    Ok(ReplicateOutput {
        means,
        vars: Some(vars),
        ers: history_ers(h)?,
        log_z: h.log_z_trace().iter().map(|z| z.ln()).collect(),
    })
}

fn hmm_output(h: &ParticleHistory<usize>) -> Result<ReplicateOutput, BenchError> {
    let mut means = Vec::with_capacity(h.steps());
    for k in 0..h.steps() {
        let p = step_probs(h, k)?;
        means.push(vec![h.values(k).iter().zip(&p).filter(|(s, _)| **s == 1).map(|(_, w)| w).sum()]);
    }
    Ok(ReplicateOutput {
        means,
        vars: None,
        ers: history_ers(h)?,
        log_z: h.log_z_trace().iter().map(|z| z.ln()).collect(),
    })
}

fn run_lattice(t: &LatticeTarget, algo: Algo, depth: usize, n: usize, m: usize, rng: &RngStream) -> Result<ReplicateOutput, BenchError> {
    let h = match (algo, depth) {
        (Algo::Bootstrap, _) => run_nested_smc_aux(t, &ExactFactory(LatticeBootstrap), &LatticeBootstrap, &UnitMultiplier, n, 1, rng)?,
        (Algo::FaSmc, _) => run_fully_adapted_smc(t, &LatticeOptimal, n, rng)?,
        (Algo::Nsmc, 1) => run_nested_smc_fa(t, &ExactFactory(LatticeOptimal), n, m, rng)?,
        (Algo::Nsmc, _) => run_nested_smc_fa(t, &lattice_nested_factory(), n, m, rng)?,
        (Algo::Nsis, _) => unreachable!("rejected by config validation"),
    };
    lattice_output(&h)
}

/// Nested SIS with the prior proposal; per-step weights are rebuilt from the
/// stored `Z_hat_q` values and the trajectories.
fn run_hmm_sis(t: &HmmTarget, n: usize, m: usize, rng: &RngStream) -> Result<ReplicateOutput, BenchError> {
    let s = run_nested_sis(t, &ExactFactory(HmmPrior), &HmmPrior, n, m, rng)?;
    let mut log_w = vec![0.0; n];
    let mut out = ReplicateOutput {
        means: Vec::new(),
        vars: None,
        ers: Vec::new(),
        log_z: Vec::new(),
    };
    for k in 0..t.horizon() {
        for (i, traj) in s.trajectories.iter().enumerate() {
            log_w[i] += s.inner_log_z[k][i].ln() + t.log_increment(&Prefix::new(traj, k + 1))
                - HmmPrior.log_density(t, &Prefix::new(traj, k), &traj[k]);
        }
        let w: Vec<LogWeight> = log_w.iter().map(|l| LogWeight::new(*l)).collect::<Result<_, _>>()?;
        let p = normalize(&w)?;
        out.means.push(vec![s.trajectories.iter().zip(&p).filter(|(tr, _)| tr[k] == 1).map(|(_, q)| q).sum()]);
        out.ers.push(effective_resample_size(&w)?);
        out.log_z.push(log_mean_exp(&w)?.ln());
    }
    Ok(out)
}

fn run_hmm(t: &HmmTarget, algo: Algo, n: usize, m: usize, rng: &RngStream) -> Result<ReplicateOutput, BenchError> {
    let h = match algo {
        Algo::Bootstrap => run_nested_smc_aux(t, &ExactFactory(HmmPrior), &HmmPrior, &UnitMultiplier, n, 1, rng)?,
        Algo::FaSmc => run_fully_adapted_smc(t, &HmmOptimal, n, rng)?,
        Algo::Nsmc => run_nested_smc_fa(t, &ExactFactory(HmmOptimal), n, m, rng)?,
        Algo::Nsis => return run_hmm_sis(t, n, m, rng),
    };
    hmm_output(&h)
}

fn run_one(problem: &Problem, cfg: &ExperimentConfig, algo: Algo, n: usize, rng: &RngStream) -> Result<ReplicateOutput, BenchError> {
    match problem {
        Problem::Lattice(t) => run_lattice(t, algo, cfg.depth, n, cfg.m, rng),
        Problem::Hmm(t) => run_hmm(t, algo, n, cfg.m, rng),
        Problem::Drought { params, precip } => {
            let m = three_level_nsmc(params, precip, n, cfg.n1, cfg.n2, rng)?;
            Ok(ReplicateOutput {
                means: m.p,
                vars: None,
                ers: m.ers,
                log_z: m.log_z,
            })
        }
    }
}

fn run_replicates(
    pool: &rayon::ThreadPool,
    problem: &Problem,
    cfg: &ExperimentConfig,
    algo: Algo,
    n: usize,
    sub_stream: u64,
    label: &str,
) -> Result<AlgoRun, BenchError> {
    let results: Vec<(ReplicateOutput, f64)> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let start = Instant::now();
                let out = run_one(problem, cfg, algo, n, &replicate_stream(cfg.seed, r).split(sub_stream))?;
                Ok((out, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>, BenchError>>()
    })?;
    let (replicates, wall_secs) = results.into_iter().unzip();
    Ok(AlgoRun {
        label: label.to_string(),
        particles: n,
        replicates,
        wall_secs,
    })
}

/// Runs every replicate of the configured algorithm and, when requested, of
/// a budget-matched bootstrap comparator. Results do not depend on the
/// worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, BenchError> {
    cfg.validate()?;
    let start = Instant::now();
    let metrics = resolve_metrics(cfg)?;
    let (problem, years, input_sha256) = build_problem(cfg)?;
    let needs_oracle = metrics.iter().any(|m| m != "ers" && m != "counts");
    let oracle = if needs_oracle { Some(compute_oracle(&problem)?) } else { None };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;

    let mut runs = vec![run_replicates(&pool, &problem, cfg, cfg.algo, cfg.n_particles, 0, &cfg.algo.to_string())?];
    let mut budget = None;
    if cfg.compare {
        let record = match cfg.budget {
            BudgetMode::Evaluations => {
                let nested_m = if cfg.algo == Algo::Nsmc { cfg.m } else { 1 };
                matched_budget(cfg.n_particles, nested_m)
            }
            BudgetMode::Time => {
                let rng = replicate_stream(cfg.seed, 0);
                let pilot = cfg.n_particles.max(100);
                let n_b = time_matched_particles(
                    || {
                        let _ = run_one(&problem, cfg, cfg.algo, cfg.n_particles, &rng.split(0));
                    },
                    |np| {
                        let _ = run_one(&problem, cfg, Algo::Bootstrap, np, &rng.split(1));
                    },
                    pilot,
                );
                BudgetRecord {
                    mode: "time".into(),
                    count_model: format!("measured wall time, bootstrap pilot with {pilot} particles"),
                    reference_particles: cfg.n_particles,
                    reference_inner: cfg.m,
                    comparator_particles: n_b,
                }
            }
        };
        runs.push(run_replicates(&pool, &problem, cfg, Algo::Bootstrap, record.comparator_particles, 1, "bootstrap-matched")?);
        budget = Some(record);
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        oracle,
        budget,
        years,
        input_sha256,
        metrics,
        total_wall_secs: start.elapsed().as_secs_f64(),
    })
}
