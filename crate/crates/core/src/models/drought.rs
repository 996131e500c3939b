//! Binary spatio-temporal drought field on an `I × J` grid.
//!
//! `x_{k,i,j} = 1` marks an abnormally dry site in year `k`. The field has
//! three kinds of potentials:
//!
//! - `φ`: a Gaussian likelihood of the precipitation `y_{k,i,j}` with mean
//!   `μ_ab` under drought and `μ_norm` otherwise, normalizing constant included;
//! - `ρ`: `C1` for each pair of equal horizontal or vertical neighbours;
//! - `ψ`: `C2` for each site equal to itself in the previous year, from the
//!   second year on.
//!
//! A grid state is stored column by column, `x[j][i]`, so that the grid can be
//! built one column at a time and each column one site at a time. Filtering
//! uses three levels of nested SMC: years, then columns, then sites.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backward::{AuxRunner, Decomposition, FullyAdaptedRunner, NestedSmcFactory};
use crate::engine::{run_nested_smc_fa, ExactFactory, ExactProposal, StepProposalDensity, UnitMultiplier};
use crate::error::{Error, Result};
use crate::weight::LogWeight;
use crate::models::hmm::DiscreteKernel;
use crate::rng::RngStream;
use crate::sampler::ProperSampler;
use crate::target::{Path, SequentialTarget};

/// A grid state, column-major: `grid[j][i]`.
pub type Grid = Vec<Vec<u8>>;

#[derive(Debug, Clone, PartialEq)]
pub struct DroughtParams {
    pub rows: usize,
    pub cols: usize,
    pub c1: f64,
    pub c2: f64,
    /// Row-major `I × J` grids.
    pub mu_norm: Vec<f64>,
    pub mu_ab: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DroughtParams {
    /// Default couplings `C1 = 0.5`, `C2 = 3`.
    pub fn new(rows: usize, cols: usize, mu_norm: Vec<f64>, mu_ab: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let p = DroughtParams {
            rows,
            cols,
            c1: 0.5,
            c2: 3.0,
            mu_norm,
            mu_ab,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_couplings(mut self, c1: f64, c2: f64) -> Result<Self> {
        self.c1 = c1;
        self.c2 = c2;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let sites = self.rows * self.cols;
        if sites == 0 {
            return Err(Error::InvalidParameter("grid must have at least one site".into()));
        }
        for g in [&self.mu_norm, &self.mu_ab, &self.sigma] {
            if g.len() != sites {
                return Err(Error::DimensionMismatch { expected: sites, got: g.len() });
            }
        }
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be positive everywhere".into()));
        }
        if self.mu_norm.iter().chain(&self.mu_ab).any(|m| !m.is_finite()) || !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(Error::InvalidParameter("parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    /// `log φ(x, y)` at site `(i, j)`.
    #[inline]
    pub fn log_phi(&self, i: usize, j: usize, x: u8, y: f64) -> f64 {
        let s = self.index(i, j);
        let mean = if x == 1 { self.mu_ab[s] } else { self.mu_norm[s] };
        let sd = self.sigma[s];
        let r = (y - mean) / sd;
        -0.5 * r * r - (sd * (2.0 * PI).sqrt()).ln()
    }

    #[inline]
    fn log_match(&self, c: f64, a: u8, b: u8) -> f64 {
        if a == b {
            c
        } else {
            0.0
        }
    }
}

/// `log φ ρ ψ` for year `k` on a full grid, `y` row-major.
///
/// Entries are assumed binary; see [`try_drought_log_increment`].
pub fn drought_log_increment(params: &DroughtParams, x: &Grid, x_prev: Option<&Grid>, y: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..params.cols {
        for i in 0..params.rows {
            let v = x[j][i];
            s += params.log_phi(i, j, v, y[params.index(i, j)]);
            if j > 0 {
                s += params.log_match(params.c1, v, x[j - 1][i]);
            }
            if i > 0 {
                s += params.log_match(params.c1, v, x[j][i - 1]);
            }
            if let Some(p) = x_prev {
                s += params.log_match(params.c2, v, p[j][i]);
            }
        }
    }
    s
}

fn check_grid(params: &DroughtParams, x: &Grid) -> Result<()> {
    if x.len() != params.cols {
        return Err(Error::DimensionMismatch { expected: params.cols, got: x.len() });
    }
    for col in x {
        if col.len() != params.rows {
            return Err(Error::DimensionMismatch { expected: params.rows, got: col.len() });
        }
        if let Some(v) = col.iter().find(|v| **v > 1) {
            return Err(Error::InvalidParameter(format!("non-binary grid entry {v}")));
        }
    }
    Ok(())
}

/// [`drought_log_increment`] with shape and binary checks.
pub fn try_drought_log_increment(params: &DroughtParams, x: &Grid, x_prev: Option<&Grid>, y: &[f64]) -> Result<f64> {
    check_grid(params, x)?;
    if let Some(p) = x_prev {
        check_grid(params, p)?;
    }
    if y.len() != params.sites() {
        return Err(Error::DimensionMismatch { expected: params.sites(), got: y.len() });
    }
    Ok(drought_log_increment(params, x, x_prev, y))
}

/// Precipitation in millimetres, `n` years of row-major `I × J` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecipGrid {
    pub rows: usize,
    pub cols: usize,
    pub years: Vec<i64>,
    pub y: Vec<Vec<f64>>,
}

impl PrecipGrid {
    pub fn new(rows: usize, cols: usize, years: Vec<i64>, y: Vec<Vec<f64>>) -> Result<Self> {
        if rows * cols == 0 {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        if years.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: years.len(), got: y.len() });
        }
        for row in &y {
            if row.len() != rows * cols {
                return Err(Error::DimensionMismatch { expected: rows * cols, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidParameter("precipitation must be finite and nonnegative".into()));
            }
        }
        Ok(PrecipGrid { rows, cols, years, y })
    }

    pub fn n_years(&self) -> usize {
        self.y.len()
    }

    /// The first `n` years.
    pub fn truncated(&self, n: usize) -> PrecipGrid {
        let n = n.min(self.y.len());
        PrecipGrid {
            rows: self.rows,
            cols: self.cols,
            years: self.years[..n].to_vec(),
            y: self.y[..n].to_vec(),
        }
    }
}

/// Per-site parameters from precipitation series.
///
/// Each sorted series is split in halves: `μ_ab` is the mean of the lower
/// `⌊n/2⌋` years, `μ_norm` the mean of the upper `⌊n/2⌋` (the median year is
/// left out when `n` is odd), and `σ²` is the sample variance of the series.
/// A constant series gets `μ_norm` equal to its value, `μ_ab = 0` and `σ²`
/// equal to the mean variance of the non-constant sites.
pub fn estimate_site_params(precip: &PrecipGrid) -> Result<DroughtParams> {
    let sites = precip.rows * precip.cols;
    if sites == 0 || precip.y.is_empty() {
        return Err(Error::InvalidParameter("empty precipitation grid".into()));
    }
    let n = precip.n_years();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two years".into()));
    }
    let half = n / 2;
    let mut mu_norm = vec![0.0; sites];
    let mut mu_ab = vec![0.0; sites];
    let mut var = vec![f64::NAN; sites];
    let mut constant = Vec::new();
    for s in 0..sites {
        let mut series: Vec<f64> = precip.y.iter().map(|row| row[s]).collect();
        series.sort_by(f64::total_cmp);
        if series[0] == series[n - 1] {
            mu_norm[s] = series[0];
            mu_ab[s] = 0.0;
            constant.push(s);
            continue;
        }
        mu_ab[s] = series[..half].iter().sum::<f64>() / half as f64;
        mu_norm[s] = series[n - half..].iter().sum::<f64>() / half as f64;
        let mean = series.iter().sum::<f64>() / n as f64;
        var[s] = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    if !constant.is_empty() {
        let varying: Vec<f64> = var.iter().copied().filter(|v| !v.is_nan()).collect();
        if varying.is_empty() {
            return Err(Error::InvalidParameter("every site has constant precipitation".into()));
        }
        let fallback = varying.iter().sum::<f64>() / varying.len() as f64;
        for s in constant {
            var[s] = fallback;
        }
    }
    let sigma = var.iter().map(|v| v.sqrt()).collect();
    DroughtParams::new(precip.rows, precip.cols, mu_norm, mu_ab, sigma)
}

/// The field as a sequential target over years.
#[derive(Debug, Clone)]
pub struct DroughtTarget {
    params: Arc<DroughtParams>,
    y: Vec<Vec<f64>>,
}

impl DroughtTarget {
    pub fn new(params: DroughtParams, y: Vec<Vec<f64>>) -> Result<Self> {
        params.validate()?;
        if y.is_empty() {
            return Err(Error::InvalidParameter("no observations".into()));
        }
        for row in &y {
            if row.len() != params.sites() {
                return Err(Error::DimensionMismatch { expected: params.sites(), got: row.len() });
            }
        }
        Ok(DroughtTarget { params: Arc::new(params), y })
    }

    pub fn params(&self) -> &DroughtParams {
        &self.params
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.y
    }
}

impl SequentialTarget for DroughtTarget {
    type State = Grid;

    fn horizon(&self) -> usize {
        self.y.len()
    }

    fn log_increment(&self, path: &dyn Path<Grid>) -> f64 {
        let k = path.len();
        let prev = (k >= 2).then(|| path.get(k - 2));
        drought_log_increment(&self.params, path.get(k - 1), prev, &self.y[k - 1])
    }

    fn markov_window(&self) -> Option<usize> {
        Some(1)
    }
}

/// One year of the field built column by column. Column `j`'s increment holds
/// every potential touching column `j` and not a later column.
#[derive(Debug, Clone)]
pub struct ColumnChain {
    params: Arc<DroughtParams>,
    prev: Option<Arc<Grid>>,
    y: Arc<Vec<f64>>,
}

impl SequentialTarget for ColumnChain {
    type State = Vec<u8>;

    fn horizon(&self) -> usize {
        self.params.cols
    }

    fn log_increment(&self, path: &dyn Path<Vec<u8>>) -> f64 {
        let p = &*self.params;
        let j = path.len() - 1;
        let col = path.get(j);
        let left = (j > 0).then(|| path.get(j - 1));
        let mut s = 0.0;
        for i in 0..p.rows {
            let v = col[i];
            s += p.log_phi(i, j, v, self.y[p.index(i, j)]);
            if let Some(l) = left {
                s += p.log_match(p.c1, v, l[i]);
            }
            if i > 0 {
                s += p.log_match(p.c1, v, col[i - 1]);
            }
            if let Some(prev) = &self.prev {
                s += p.log_match(p.c2, v, prev[j][i]);
            }
        }
        s
    }

    fn markov_window(&self) -> Option<usize> {
        Some(1)
    }
}

/// One column of one year built site by site.
#[derive(Debug, Clone)]
pub struct SiteChain {
    params: Arc<DroughtParams>,
    col: usize,
    left: Option<Vec<u8>>,
    prev: Option<Vec<u8>>,
    y: Arc<Vec<f64>>,
}

impl SiteChain {
    fn prior_log_weight(&self, i: usize, v: u8) -> f64 {
        match &self.prev {
            Some(p) => self.params.log_match(self.params.c2, v, p[i]),
            None => 0.0,
        }
    }
}

impl SequentialTarget for SiteChain {
    type State = u8;

    fn horizon(&self) -> usize {
        self.params.rows
    }

    fn log_increment(&self, path: &dyn Path<u8>) -> f64 {
        let p = &*self.params;
        let i = path.len() - 1;
        let v = *path.get(i);
        let mut s = p.log_phi(i, self.col, v, self.y[p.index(i, self.col)]) + self.prior_log_weight(i, v);
        if let Some(l) = &self.left {
            s += p.log_match(p.c1, v, l[i]);
        }
        if i > 0 {
            s += p.log_match(p.c1, v, *path.get(i - 1));
        }
        s
    }

    fn markov_window(&self) -> Option<usize> {
        Some(1)
    }
}

/// Bootstrap proposal for a site: `exp(C2 · 1[x = x_{k-1}])`, uniform in the first year.
#[derive(Debug, Clone, Copy, Default)]
pub struct SitePrior;

/// Binary kernel over `{0, 1}`.
#[derive(Debug, Clone)]
pub struct SiteKernel(DiscreteKernel);

impl ProperSampler for SiteKernel {
    type Value = u8;

    fn log_z(&self) -> LogWeight {
        self.0.log_z()
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<u8> {
        Ok(self.0.simulate(rng)? as u8)
    }
}

impl ExactProposal<SiteChain> for SitePrior {
    type Kernel = SiteKernel;

    fn kernel(&self, target: &SiteChain, prefix: &dyn Path<u8>) -> Result<SiteKernel> {
        let i = prefix.len();
        DiscreteKernel::from_log_weights(&[target.prior_log_weight(i, 0), target.prior_log_weight(i, 1)]).map(SiteKernel)
    }
}

impl StepProposalDensity<SiteChain> for SitePrior {
    fn log_density(&self, target: &SiteChain, prefix: &dyn Path<u8>, x: &u8) -> f64 {
        target.prior_log_weight(prefix.len(), *x)
    }
}

/// Splits a year into columns.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridToColumns;

impl Decomposition<DroughtTarget> for GridToColumns {
    type Inner = ColumnChain;

    fn inner_target(&self, outer: &DroughtTarget, prefix: &dyn Path<Grid>) -> Result<ColumnChain> {
        Ok(ColumnChain {
            params: Arc::clone(&outer.params),
            prev: prefix.last().map(|g| Arc::new(g.clone())),
            y: Arc::new(outer.y[prefix.len()].clone()),
        })
    }

    fn assemble(&self, inner_path: Vec<Vec<u8>>) -> Grid {
        inner_path
    }
}

/// Splits a column into sites.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColumnToSites;

impl Decomposition<ColumnChain> for ColumnToSites {
    type Inner = SiteChain;

    fn inner_target(&self, outer: &ColumnChain, prefix: &dyn Path<Vec<u8>>) -> Result<SiteChain> {
        let col = prefix.len();
        Ok(SiteChain {
            params: Arc::clone(&outer.params),
            col,
            left: prefix.last().cloned(),
            prev: outer.prev.as_ref().map(|g| g[col].clone()),
            y: Arc::clone(&outer.y),
        })
    }

    fn assemble(&self, inner_path: Vec<u8>) -> Vec<u8> {
        inner_path
    }
}

/// Site level: bootstrap particle filters over the sites of a column.
pub type SiteRunner = AuxRunner<ExactFactory<SitePrior>, SitePrior, UnitMultiplier>;
/// Column level: fully adapted nested SMC over columns, fed by site-level runs.
pub type ColumnFactory = NestedSmcFactory<ColumnToSites, SiteRunner>;
/// Year level factory, fed by column-level runs.
pub type GridFactory = NestedSmcFactory<GridToColumns, FullyAdaptedRunner<ColumnFactory>>;

/// The year-level step factory: its precision is the column-level particle
/// count `N1`, and each column-level run uses `n2` site-level particles.
pub fn three_level_factory(n2: usize) -> GridFactory {
    let site_runner = AuxRunner {
        factory: ExactFactory(SitePrior),
        proposal_density: SitePrior,
        multiplier: UnitMultiplier,
        precision: 1,
    };
    NestedSmcFactory {
        decomposition: GridToColumns,
        runner: FullyAdaptedRunner {
            factory: NestedSmcFactory {
                decomposition: ColumnToSites,
                runner: site_runner,
                level: 2,
            },
            precision: n2,
        },
        level: 1,
    }
}

/// Filtering marginals `P(x_{k,i,j} = 1 | y_{1:k})`, row-major per year, with
/// the year-level run's diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DroughtMarginals {
    pub rows: usize,
    pub cols: usize,
    pub p: Vec<Vec<f64>>,
    /// `log Z_hat_k` per year.
    pub log_z: Vec<f64>,
    /// Effective resample size of the year-level resampling weights per year.
    pub ers: Vec<f64>,
}

impl DroughtMarginals {
    /// Number of sites with estimated drought probability above `threshold`, per year.
    pub fn count_above(&self, threshold: f64) -> Vec<usize> {
        self.p.iter().map(|row| row.iter().filter(|&&v| v > threshold).count()).collect()
    }
}

/// Three-level nested SMC: `n` year-level particles, `n1` column-level and
/// `n2` site-level particles per inner run. Marginals are particle frequencies
/// of the year-level set.
pub fn three_level_nsmc(
    params: &DroughtParams,
    precip: &PrecipGrid,
    n: usize,
    n1: usize,
    n2: usize,
    rng: &RngStream,
) -> Result<DroughtMarginals> {
    if n == 0 || n1 == 0 || n2 == 0 {
        return Err(Error::InvalidParameter("N, N1 and N2 must be positive".into()));
    }
    if precip.rows != params.rows || precip.cols != params.cols {
        return Err(Error::DimensionMismatch { expected: params.sites(), got: precip.rows * precip.cols });
    }
    let target = DroughtTarget::new(params.clone(), precip.y.clone())?;
    let history = run_nested_smc_fa(&target, &three_level_factory(n2), n, n1, rng).map_err(|e| e.at_level(0))?;
    let p = (0..history.steps())
        .map(|k| {
            let mut freq = vec![0.0; params.sites()];
            for grid in history.values(k) {
                for (j, col) in grid.iter().enumerate() {
                    for (i, &v) in col.iter().enumerate() {
                        freq[params.index(i, j)] += f64::from(v);
                    }
                }
            }
            freq.iter_mut().for_each(|f| *f /= n as f64);
            freq
        })
        .collect();
    let ers = (0..history.steps()).map(|k| history.ers(k)).collect::<Result<_>>()?;
    Ok(DroughtMarginals {
        rows: params.rows,
        cols: params.cols,
        p,
        log_z: history.log_z_trace().iter().map(|z| z.ln()).collect(),
        ers,
    })
}

/// Every binary grid of the given shape, `2^(rows·cols)` of them.
pub fn all_grids(rows: usize, cols: usize) -> Result<Vec<Grid>> {
    let sites = rows * cols;
    if sites > 12 {
        return Err(Error::EnumerationInfeasible {
            states: 1usize.checked_shl(sites as u32).unwrap_or(usize::MAX),
            limit: 4096,
        });
    }
    Ok((0..1usize << sites)
        .map(|code| {
            (0..cols)
                .map(|j| (0..rows).map(|i| ((code >> (i * cols + j)) & 1) as u8).collect())
                .collect()
        })
        .collect())
}

/// Synthetic precipitation with drought episodes drawn from the field's own
/// prior. Returns the latent grids and the precipitation.
///
/// Each year starts from the previous year's grid and runs `sweeps` Gibbs
/// sweeps of the `ρ ψ` prior; precipitation is then drawn from `φ` and
/// clipped at zero.
pub fn synthetic_precipitation(
    params: &DroughtParams,
    n_years: usize,
    sweeps: usize,
    rng: &mut RngStream,
) -> Result<(Vec<Grid>, PrecipGrid)> {
    params.validate()?;
    let (rows, cols) = (params.rows, params.cols);
    let mut grids: Vec<Grid> = Vec::with_capacity(n_years);
    let mut ys = Vec::with_capacity(n_years);
    for k in 0..n_years {
        let mut x: Grid = match k {
            0 => (0..cols).map(|_| (0..rows).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect()).collect(),
            _ => grids[k - 1].clone(),
        };
        for _ in 0..sweeps {
            for j in 0..cols {
                for i in 0..rows {
                    let mut logit = 0.0;
                    for v in [0u8, 1] {
                        let mut e = 0.0;
                        let sign = if v == 1 { 1.0 } else { -1.0 };
                        if j > 0 {
                            e += params.log_match(params.c1, v, x[j - 1][i]);
                        }
                        if j + 1 < cols {
                            e += params.log_match(params.c1, v, x[j + 1][i]);
                        }
                        if i > 0 {
                            e += params.log_match(params.c1, v, x[j][i - 1]);
                        }
                        if i + 1 < rows {
                            e += params.log_match(params.c1, v, x[j][i + 1]);
                        }
                        if k > 0 {
                            e += params.log_match(params.c2, v, grids[k - 1][j][i]);
                        }
                        logit += sign * e;
                    }
                    let p1 = 1.0 / (1.0 + (-logit).exp());
                    x[j][i] = u8::from(rng.random::<f64>() < p1);
                }
            }
        }
        let mut y = vec![0.0; rows * cols];
        for j in 0..cols {
            for i in 0..rows {
                let s = params.index(i, j);
                let mean = if x[j][i] == 1 { params.mu_ab[s] } else { params.mu_norm[s] };
                let z: f64 = StandardNormal.sample(rng);
                y[s] = (mean + params.sigma[s] * z).max(0.0);
            }
        }
        grids.push(x);
        ys.push(y);
    }
    let precip = PrecipGrid::new(rows, cols, (0..n_years as i64).collect(), ys)?;
    Ok((grids, precip))
}

/// Climatology for synthetic data: normal precipitation rising from 400 to
/// 1200 mm across the columns, drought years at 55% of normal and a
/// standard deviation of 15% of normal.
pub fn synthetic_params(rows: usize, cols: usize) -> Result<DroughtParams> {
    let mut mu_norm = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let t = if cols > 1 { j as f64 / (cols - 1) as f64 } else { 0.5 };
            mu_norm.push(400.0 + 800.0 * t + 20.0 * i as f64);
        }
    }
    let mu_ab = mu_norm.iter().map(|m| 0.55 * m).collect();
    let sigma = mu_norm.iter().map(|m| 0.15 * m).collect();
    DroughtParams::new(rows, cols, mu_norm, mu_ab, sigma)
}

/// Reads `year,row,col,precip_mm` rows (0-based `row`, `col`) into a grid.
/// Every year must list every site exactly once.
pub fn read_precip_csv<R: BufRead>(input: R) -> Result<PrecipGrid> {
    let bad = |msg: String| Error::InvalidParameter(msg);
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad("empty precipitation file".into()))?.map_err(|e| bad(e.to_string()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["year", "row", "col", "precip_mm"] {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut cells: BTreeMap<i64, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    let (mut rows, mut ncols) = (0, 0);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(format!("line {}: expected 4 fields", lineno + 2)));
        }
        let parse_err = |e: String| bad(format!("line {}: {e}", lineno + 2));
        let year: i64 = f[0].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
        let r: usize = f[1].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
        let c: usize = f[2].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
        let v: f64 = f[3].parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?;
        rows = rows.max(r + 1);
        ncols = ncols.max(c + 1);
        if cells.entry(year).or_default().insert((r, c), v).is_some() {
            return Err(bad(format!("duplicate entry for year {year}, site ({r}, {c})")));
        }
    }
    let mut years = Vec::new();
    let mut y = Vec::new();
    for (year, grid) in cells {
        if grid.len() != rows * ncols {
            return Err(bad(format!("year {year} has {} of {} sites", grid.len(), rows * ncols)));
        }
        years.push(year);
        y.push(grid.into_values().collect());
    }
    PrecipGrid::new(rows, ncols, years, y)
}

/// Writes a grid in the `year,row,col,precip_mm` format.
pub fn write_precip_csv<W: Write>(mut out: W, precip: &PrecipGrid) -> std::io::Result<()> {
    writeln!(out, "year,row,col,precip_mm")?;
    for (year, row) in precip.years.iter().zip(&precip.y) {
        for i in 0..precip.rows {
            for j in 0..precip.cols {
                writeln!(out, "{year},{i},{j},{:?}", row[i * precip.cols + j])?;
            }
        }
    }
    Ok(())
}

/// Writes `year,row,col,p_drought` rows, then one summary row per year and
/// threshold: `year,count,<threshold>,<number of sites above it>`.
pub fn write_marginals_csv<W: Write>(mut out: W, years: &[i64], m: &DroughtMarginals, thresholds: &[f64]) -> std::io::Result<()> {
    writeln!(out, "year,row,col,p_drought")?;
    for (year, row) in years.iter().zip(&m.p) {
        for i in 0..m.rows {
            for j in 0..m.cols {
                writeln!(out, "{year},{i},{j},{:?}", row[i * m.cols + j])?;
            }
        }
    }
    for t in thresholds {
        for (year, c) in years.iter().zip(m.count_above(*t)) {
            writeln!(out, "{year},count,{t},{c}")?;
        }
    }
    Ok(())
}
