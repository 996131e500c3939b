//! Experiment configuration: presets, flat `key = value` files and overrides.
//!
//! Later sources win: preset, then config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    GaussianLattice,
    Drought,
    HmmTest,
}

impl FromStr for Model {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "gaussian-lattice" | "gauss" => Ok(Model::GaussianLattice),
            "drought" => Ok(Model::Drought),
            "hmm-test" | "hmm" => Ok(Model::HmmTest),
            other => Err(BenchError::Config(format!(
                "unknown model {other:?}; expected gaussian-lattice, drought or hmm-test"
            ))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::GaussianLattice => "gaussian-lattice",
            Model::Drought => "drought",
            Model::HmmTest => "hmm-test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    /// Bootstrap particle filter.
    Bootstrap,
    /// Fully adapted SMC with exact optimal proposals.
    FaSmc,
    /// Nested SMC.
    Nsmc,
    /// Nested SIS, no resampling.
    Nsis,
}

impl FromStr for Algo {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "bootstrap" | "bpf" => Ok(Algo::Bootstrap),
            "fa-smc" | "fapf" => Ok(Algo::FaSmc),
            "nsmc" => Ok(Algo::Nsmc),
            "nsis" => Ok(Algo::Nsis),
            other => Err(BenchError::Config(format!(
                "unknown algorithm {other:?}; expected bootstrap, fa-smc, nsmc or nsis"
            ))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Bootstrap => "bootstrap",
            Algo::FaSmc => "fa-smc",
            Algo::Nsmc => "nsmc",
            Algo::Nsis => "nsis",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// Equal density-evaluation counts.
    Evaluations,
    /// Equal measured wall-clock time; not reproducible across machines.
    Time,
}

impl FromStr for BudgetMode {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "evaluations" | "evals" => Ok(BudgetMode::Evaluations),
            "time" => Ok(BudgetMode::Time),
            other => Err(BenchError::Config(format!("unknown budget mode {other:?}; expected evaluations or time"))),
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: Model,
    pub algo: Algo,
    /// Outer particle count.
    #[serde(rename = "N")]
    pub n_particles: usize,
    /// Inner particle count (precision) for nested samplers.
    #[serde(rename = "M")]
    pub m: usize,
    /// Nesting depth: 1 for exact proposals, 2 for an inner particle filter
    /// per outer step, 3 for the drought model's three levels.
    pub depth: usize,
    /// Horizon.
    pub n: usize,
    /// Lattice dimension.
    pub d: usize,
    pub rows: usize,
    pub cols: usize,
    /// Drought column-level and site-level particle counts.
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Also run a budget-matched bootstrap particle filter.
    pub compare: bool,
    pub budget: BudgetMode,
    /// Write per-component rows as well as the per-step medians.
    pub components: bool,
    /// Precipitation CSV for the drought model; synthetic data otherwise.
    pub input: Option<PathBuf>,
    /// Requested metrics; `None` picks every metric the model's oracle supports.
    pub metrics: Option<Vec<String>>,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub workers: usize,
}

/// Keys accepted in config files, presets and overrides.
pub const KEYS: &[&str] = &[
    "model", "algo", "N", "M", "depth", "n", "d", "rows", "cols", "N1", "N2", "replicates", "seed", "compare", "budget",
    "components", "input", "metrics", "out", "workers",
];

/// Metric names accepted by the `metrics` key.
pub const METRICS: &[&str] = &["ess", "ess_var", "mse", "ers", "evidence", "mae", "counts"];

pub const PRESETS: &[&str] = &["gauss-d50", "gauss-d100", "gauss-d200", "drought-na", "drought-sahel", "hmm-test"];

/// Key-value pairs of a preset. Presets never fix the seed.
pub fn preset(name: &str) -> Result<Vec<(&'static str, String)>, BenchError> {
    let gauss = |d: usize| {
        vec![
            ("model", "gaussian-lattice".to_string()),
            ("algo", "nsmc".into()),
            ("depth", "2".into()),
            ("d", d.to_string()),
            ("n", "100".into()),
            ("N", "500".into()),
            ("M", (2 * d).to_string()),
            ("replicates", "100".into()),
            ("compare", "true".into()),
        ]
    };
    let drought = |rows: usize, cols: usize, n1: usize| {
        vec![
            ("model", "drought".to_string()),
            ("algo", "nsmc".into()),
            ("depth", "3".into()),
            ("rows", rows.to_string()),
            ("cols", cols.to_string()),
            ("n", "20".into()),
            ("N", "100".into()),
            ("N1", n1.to_string()),
            ("N2", "20".into()),
            ("replicates", "1".into()),
        ]
    };
    Ok(match name {
        "gauss-d50" => gauss(50),
        "gauss-d100" => gauss(100),
        "gauss-d200" => gauss(200),
        "drought-na" => drought(20, 30, 30),
        "drought-sahel" => drought(24, 44, 40),
        "hmm-test" => vec![
            ("model", "hmm-test".to_string()),
            ("algo", "nsmc".into()),
            ("depth", "1".into()),
            ("n", "8".into()),
            ("N", "50".into()),
            ("M", "1".into()),
            ("replicates", "40".into()),
            ("compare", "true".into()),
        ],
        other => {
            return Err(BenchError::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    })
}

/// Parses a flat `key = value` file. `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, BenchError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BenchError::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Accumulates settings from every source, then resolves them.
#[derive(Debug, Default, Clone)]
pub struct ConfigBuilder {
    values: BTreeMap<String, String>,
}

impl ConfigBuilder {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<&mut Self, BenchError> {
        if !KEYS.contains(&key) {
            return Err(BenchError::Config(format!("unknown key {key:?}; known keys: {}", KEYS.join(", "))));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(self)
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<&mut Self, BenchError> {
        for (k, v) in preset(name)? {
            self.set(k, v)?;
        }
        Ok(self)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<&mut Self, BenchError> {
        for (k, v) in parse_config_text(text)? {
            self.set(&k, v)?;
        }
        Ok(self)
    }

    fn get<T: FromStr>(&self, key: &str, default: Option<T>) -> Result<T, BenchError>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            Some(v) => v.parse().map_err(|e| BenchError::Config(format!("bad value {v:?} for {key}: {e}"))),
            None => default.ok_or_else(|| BenchError::Config(format!("missing required setting {key:?}"))),
        }
    }

    pub fn build(&self) -> Result<ExperimentConfig, BenchError> {
        let model: Model = self.get("model", None)?;
        let algo: Algo = self.get("algo", None)?;
        let default_depth = match (model, algo) {
            (Model::Drought, _) => 3,
            (_, Algo::Nsmc) => 2,
            _ => 1,
        };
        let cfg = ExperimentConfig {
            model,
            algo,
            n_particles: self.get("N", None)?,
            m: self.get("M", Some(1))?,
            depth: self.get("depth", Some(default_depth))?,
            n: self.get("n", None)?,
            d: self.get("d", Some(1))?,
            rows: self.get("rows", Some(1))?,
            cols: self.get("cols", Some(1))?,
            n1: self.get("N1", Some(1))?,
            n2: self.get("N2", Some(1))?,
            replicates: self.get("replicates", Some(1))?,
            seed: self.get("seed", None)?,
            compare: self.get("compare", Some(false))?,
            budget: self.get("budget", Some(BudgetMode::Evaluations))?,
            components: self.get("components", Some(false))?,
            input: self.values.get("input").map(PathBuf::from),
            metrics: self
                .values
                .get("metrics")
                .map(|v| v.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect()),
            out: self.get("out", Some(PathBuf::from("nsmc-out")))?,
            workers: self.get("workers", Some(1))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        for (name, v) in [
            ("N", self.n_particles),
            ("M", self.m),
            ("n", self.n),
            ("d", self.d),
            ("rows", self.rows),
            ("cols", self.cols),
            ("N1", self.n1),
            ("N2", self.n2),
            ("replicates", self.replicates),
            ("workers", self.workers),
            ("depth", self.depth),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        match (self.model, self.algo) {
            (Model::Drought, Algo::Nsmc) if self.depth == 3 => {}
            (Model::Drought, _) => return bad("the drought model runs with algo = nsmc and depth = 3".into()),
            (Model::GaussianLattice, Algo::Nsmc) if self.depth <= 2 => {}
            (Model::GaussianLattice, Algo::Nsmc) => return bad("lattice nested SMC supports depth 1 or 2".into()),
            (Model::GaussianLattice, Algo::Nsis) => {
                return bad("nested SIS is only wired for the hmm-test model".into())
            }
            (Model::HmmTest, Algo::Nsmc | Algo::Nsis) if self.depth == 1 => {}
            (Model::HmmTest, Algo::Nsmc | Algo::Nsis) => return bad("hmm-test samplers use depth 1".into()),
            _ => {}
        }
        if let Some(ms) = &self.metrics {
            if let Some(m) = ms.iter().find(|m| !METRICS.contains(&m.as_str())) {
                return bad(format!("unknown metric {m:?}; known metrics: {}", METRICS.join(", ")));
            }
        }
        if self.compare && self.model == Model::Drought {
            return bad("no bootstrap comparator is wired for the drought model".into());
        }
        if self.input.is_some() && self.model != Model::Drought {
            return bad("input files are read for the drought model only".into());
        }
        Ok(())
    }

    /// Stable text form of every setting that affects the outputs, one
    /// `key=value` per line. The worker count and output path are left out.
    pub fn echo(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        if let serde_json::Value::Object(map) = json {
            let sorted: BTreeMap<_, _> = map.into_iter().collect();
            for (k, v) in sorted {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Null => String::new(),
                    serde_json::Value::Array(items) => items
                        .iter()
                        .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                        .collect::<Vec<_>>()
                        .join(","),
                    other => other.to_string(),
                };
                lines.push(format!("{k}={v}"));
            }
        }
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_sources_override_earlier_ones() {
        let mut b = ConfigBuilder::default();
        b.apply_preset("gauss-d50").unwrap();
        b.apply_text("# comment\nN = 7\nseed=3\n").unwrap();
        b.set("M", "4").unwrap();
        let c = b.build().unwrap();
        assert_eq!((c.d, c.n_particles, c.m, c.seed), (50, 7, 4, 3));
        assert!(c.compare);
    }

    #[test]
    fn presets_carry_the_reference_budgets() {
        let build = |name: &str| {
            let mut b = ConfigBuilder::default();
            b.apply_preset(name).unwrap().set("seed", "1").unwrap();
            b.build().unwrap()
        };
        let g = build("gauss-d100");
        assert_eq!((g.d, g.n_particles, g.m, g.n, g.depth), (100, 500, 200, 100, 2));
        let na = build("drought-na");
        assert_eq!((na.rows, na.cols, na.n_particles, na.n1, na.n2), (20, 30, 100, 30, 20));
        let sahel = build("drought-sahel");
        assert_eq!((sahel.rows * sahel.cols, sahel.n1), (1056, 40));
    }

    #[test]
    fn seed_is_required() {
        let mut b = ConfigBuilder::default();
        b.apply_preset("hmm-test").unwrap();
        assert!(matches!(b.build(), Err(BenchError::Config(m)) if m.contains("seed")));
    }

    #[test]
    fn rejects_unknown_names_and_zero_budgets() {
        assert!("particle-gibbs".parse::<Algo>().is_err());
        assert!(ConfigBuilder::default().set("colour", "red").is_err());
        assert!(preset("gauss-d1000").is_err());
        let mut b = ConfigBuilder::default();
        b.apply_preset("hmm-test").unwrap().set("seed", "1").unwrap().set("N", "0").unwrap();
        assert!(b.build().is_err());
        assert!(parse_config_text("just words").is_err());
    }

    #[test]
    fn echo_ignores_workers_and_output() {
        let mut b = ConfigBuilder::default();
        b.apply_preset("hmm-test").unwrap().set("seed", "1").unwrap();
        let a = b.build().unwrap();
        b.set("workers", "8").unwrap().set("out", "elsewhere").unwrap();
        assert_eq!(a.echo(), b.build().unwrap().echo());
        assert!(a.echo().contains("N=50"));
    }
}
