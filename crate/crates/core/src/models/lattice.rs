//! Gaussian lattice Markov random field over time.
//!
//! At time `k` the `d` components of `x_k` form a chain. Each component has
//! an observation potential `φ = exp(-τ_φ/2 (x - y)^2)`, a temporal potential
//! `ρ = exp(-τ_ρ/2 (x_{k,l} - a x_{k-1,l})^2)` with `x_0 = 0`, and neighbouring
//! components share `ψ = exp(-τ_ψ/2 (x_{k,l} - x_{k,l-1})^2)`.
//!
//! Data are simulated from a linear-Gaussian state-space model with
//! `x_1 ~ N(0, Σ)`, `x_k = a τ_ρ Σ x_{k-1} + v_k`, `v_k ~ N(0, Σ)` and
//! `y_k ~ N(x_k, τ_φ^{-1} I)`, where `Σ^{-1}` is the tridiagonal matrix from
//! [`build_precision_matrix`]. That model and the field are not the same
//! distribution.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::backward::{AuxRunner, Decomposition, NestedSmcFactory};
use crate::engine::{ExactFactory, ExactProposal, StepProposalDensity, UnitMultiplier};
use crate::error::{Error, Result};
use crate::models::scalar::{GaussianKernel, GaussianSampler};
use crate::rng::RngStream;
use crate::sampler::ProperSampler;
use crate::target::{Path, SequentialTarget};
use crate::weight::LogWeight;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLatticeParams {
    pub d: usize,
    pub tau_psi: f64,
    pub a: f64,
    pub tau_rho: f64,
    pub tau_phi: f64,
}

impl GaussianLatticeParams {
    pub fn new(d: usize, tau_psi: f64, a: f64, tau_rho: f64, tau_phi: f64) -> Result<Self> {
        let p = GaussianLatticeParams {
            d,
            tau_psi,
            a,
            tau_rho,
            tau_phi,
        };
        p.validate()?;
        Ok(p)
    }

    /// `θ = (τ_ψ, a, τ_ρ, τ_φ) = (1, 0.5, 1, 10)`.
    pub fn with_default_theta(d: usize) -> Result<Self> {
        Self::new(d, 1.0, 0.5, 1.0, 10.0)
    }

    /// `τ_ψ = 0` is accepted: it decouples the components.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(self.tau_psi >= 0.0) || !(self.tau_rho > 0.0) || !(self.tau_phi > 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need tau_psi >= 0, tau_rho > 0, tau_phi > 0, finite a; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            m[(i, i)] = self.diag[i];
        }
        for (i, &o) in self.off.iter().enumerate() {
            m[(i, i + 1)] = o;
            m[(i + 1, i)] = o;
        }
        m
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s: f64 = self.diag.iter().zip(x).map(|(a, v)| a * v * v).sum();
        for (i, &o) in self.off.iter().enumerate() {
            s += 2.0 * o * x[i] * x[i + 1];
        }
        s
    }

    pub fn cholesky(&self) -> Result<TridiagonalCholesky> {
        let d = self.dim();
        let mut diag = Vec::with_capacity(d);
        let mut sub = Vec::with_capacity(d.saturating_sub(1));
        for i in 0..d {
            let mut v = self.diag[i];
            if i > 0 {
                let l: f64 = self.off[i - 1] / diag[i - 1];
                sub.push(l);
                v -= l * l;
            }
            if !(v > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            diag.push(v.sqrt());
        }
        Ok(TridiagonalCholesky { diag, sub })
    }
}

/// `A = L L^T` with `L` lower bidiagonal.
#[derive(Debug, Clone)]
pub struct TridiagonalCholesky {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl TridiagonalCholesky {
    pub fn log_det(&self) -> f64 {
        2.0 * self.diag.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn solve_lower(&self, b: &mut [f64]) {
        for i in 0..b.len() {
            if i > 0 {
                b[i] -= self.sub[i - 1] * b[i - 1];
            }
            b[i] /= self.diag[i];
        }
    }

    fn solve_upper(&self, b: &mut [f64]) {
        for i in (0..b.len()).rev() {
            if i + 1 < b.len() {
                b[i] -= self.sub[i] * b[i + 1];
            }
            b[i] /= self.diag[i];
        }
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower(&mut x);
        self.solve_upper(&mut x);
        x
    }

    /// A draw from `N(A^{-1} b, A^{-1})`.
    pub fn sample(&self, b: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut w = b.to_vec();
        self.solve_lower(&mut w);
        for v in w.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += z;
        }
        self.solve_upper(&mut w);
        w
    }
}

/// The precision `Σ^{-1}`: diagonal `τ_ρ + τ_ψ` at the ends and `τ_ρ + 2τ_ψ`
/// inside, off-diagonal `-τ_ψ`. For `d = 1` it is `[τ_ρ]`.
pub fn build_precision_matrix(d: usize, tau_rho: f64, tau_psi: f64) -> Result<SymTridiagonal> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let diag = (0..d)
        .map(|i| {
            let neighbours = usize::from(i > 0) + usize::from(i + 1 < d);
            tau_rho + neighbours as f64 * tau_psi
        })
        .collect();
    Ok(SymTridiagonal {
        diag,
        off: vec![-tau_psi; d - 1],
    })
}

/// Draws `(x, y)`, each `n × d`, from the generating state-space model.
pub fn simulate_generating_ssm(
    params: &GaussianLatticeParams,
    n: usize,
    rng: &mut RngStream,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let chol = build_precision_matrix(params.d, params.tau_rho, params.tau_psi)?.cholesky()?;
    let obs_sd = params.tau_phi.sqrt().recip();
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for k in 0..n {
        // Σ^{-1} mean = a τ_ρ x_{k-1}, so the mean is a τ_ρ Σ x_{k-1}
        let b: Vec<f64> = match k {
            0 => vec![0.0; params.d],
            _ => xs[k - 1].iter().map(|v| params.a * params.tau_rho * v).collect(),
        };
        let x = chol.sample(&b, rng);
        let y = x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + obs_sd * z
            })
            .collect();
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}

/// Log-potentials of the field.
#[derive(Debug, Clone, Copy)]
pub struct LatticePotentials {
    params: GaussianLatticeParams,
}

/// Builds the potential evaluators for `params`.
pub fn lattice_log_potentials(params: &GaussianLatticeParams) -> LatticePotentials {
    LatticePotentials { params: *params }
}

impl LatticePotentials {
    /// `log φ(x, y)`.
    #[inline]
    pub fn log_phi(&self, x: f64, y: f64) -> f64 {
        -0.5 * self.params.tau_phi * (x - y) * (x - y)
    }

    /// `log ψ(x_{k,l}, x_{k,l-1})`.
    #[inline]
    pub fn log_psi(&self, x: f64, x_left: f64) -> f64 {
        -0.5 * self.params.tau_psi * (x - x_left) * (x - x_left)
    }

    /// `log ρ(x_{k,l}, x_{k-1,l})`.
    #[inline]
    pub fn log_rho(&self, x: f64, x_prev: f64) -> f64 {
        let r = x - self.params.a * x_prev;
        -0.5 * self.params.tau_rho * r * r
    }

    /// `Σ_l [log φ_l + log ρ_l] + Σ_{l≥2} log ψ_l` for the whole vector; `x_prev = None` anchors ρ at zero.
    pub fn log_increment(&self, x: &[f64], x_prev: Option<&[f64]>, y: &[f64]) -> f64 {
        let mut s = 0.0;
        for l in 0..x.len() {
            let prev = x_prev.map_or(0.0, |p| p[l]);
            s += self.log_phi(x[l], y[l]) + self.log_rho(x[l], prev);
            if l > 0 {
                s += self.log_psi(x[l], x[l - 1]);
            }
        }
        s
    }
}

fn check_observations(d: usize, y: &[Vec<f64>]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InvalidParameter("no observations".into()));
    }
    for row in y {
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("observations must be finite".into()));
        }
    }
    Ok(())
}

/// The field as a sequential target over time; states are `d`-vectors.
#[derive(Debug, Clone)]
pub struct LatticeTarget {
    params: GaussianLatticeParams,
    potentials: LatticePotentials,
    y: Vec<Vec<f64>>,
}

impl LatticeTarget {
    pub fn new(params: GaussianLatticeParams, y: Vec<Vec<f64>>) -> Result<Self> {
        params.validate()?;
        check_observations(params.d, &y)?;
        Ok(LatticeTarget {
            params,
            potentials: lattice_log_potentials(&params),
            y,
        })
    }

    pub fn params(&self) -> &GaussianLatticeParams {
        &self.params
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.y
    }

    /// The same target truncated to the first `n` steps.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.params, self.y[..n.min(self.y.len())].to_vec())
    }
}

impl SequentialTarget for LatticeTarget {
    type State = Vec<f64>;

    fn horizon(&self) -> usize {
        self.y.len()
    }

    fn log_increment(&self, path: &dyn Path<Vec<f64>>) -> f64 {
        let k = path.len();
        let prev = (k >= 2).then(|| path.get(k - 2).as_slice());
        self.potentials.log_increment(path.get(k - 1), prev, &self.y[k - 1])
    }

    fn markov_window(&self) -> Option<usize> {
        Some(1)
    }
}

/// `c · exp(-½ x^T P x + b^T x)` with tridiagonal `P`, sampled exactly.
#[derive(Debug, Clone)]
pub struct GaussianVectorKernel {
    chol: TridiagonalCholesky,
    b: Vec<f64>,
    log_z: LogWeight,
}

impl GaussianVectorKernel {
    /// `log_c` is the log of the constant factor `c`.
    pub fn new(precision: &SymTridiagonal, b: Vec<f64>, log_c: f64) -> Result<Self> {
        let chol = precision.cholesky()?;
        let mean = chol.solve(&b);
        let d = b.len() as f64;
        let quad: f64 = b.iter().zip(&mean).map(|(u, v)| u * v).sum();
        let log_z = log_c + 0.5 * d * (2.0 * PI).ln() - 0.5 * chol.log_det() + 0.5 * quad;
        Ok(GaussianVectorKernel {
            chol,
            b,
            log_z: LogWeight::new(log_z)?,
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        self.chol.solve(&self.b)
    }
}

impl ProperSampler for GaussianVectorKernel {
    type Value = Vec<f64>;

    fn log_z(&self) -> LogWeight {
        self.log_z
    }

    fn simulate(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(self.chol.sample(&self.b, rng))
    }
}

fn prev_state(prefix: &dyn Path<Vec<f64>>, d: usize) -> Vec<f64> {
    prefix.last().cloned().unwrap_or_else(|| vec![0.0; d])
}

/// The optimal proposal `q_k(x_k | x_{k-1}) = Π φ ρ ψ`: Gaussian with
/// precision `Σ^{-1} + τ_φ I`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LatticeOptimal;

impl ExactProposal<LatticeTarget> for LatticeOptimal {
    type Kernel = GaussianVectorKernel;

    fn kernel(&self, target: &LatticeTarget, prefix: &dyn Path<Vec<f64>>) -> Result<GaussianVectorKernel> {
        let p = &target.params;
        let y = &target.y[prefix.len()];
        let prev = prev_state(prefix, p.d);
        let precision = build_precision_matrix(p.d, p.tau_rho + p.tau_phi, p.tau_psi)?;
        let b = y
            .iter()
            .zip(&prev)
            .map(|(yl, xl)| p.tau_phi * yl + p.a * p.tau_rho * xl)
            .collect();
        let log_c = -0.5 * p.tau_phi * y.iter().map(|v| v * v).sum::<f64>()
            - 0.5 * p.a * p.a * p.tau_rho * prev.iter().map(|v| v * v).sum::<f64>();
        GaussianVectorKernel::new(&precision, b, log_c)
    }
}

/// The bootstrap proposal `Π ρ ψ`, the transition of the generating model
/// times a factor depending on `x_{k-1}` only.
#[derive(Debug, Clone, Copy, Default)]
pub struct LatticeBootstrap;

impl LatticeBootstrap {
    fn parts(target: &LatticeTarget, prefix: &dyn Path<Vec<f64>>) -> Result<(SymTridiagonal, Vec<f64>, f64)> {
        let p = &target.params;
        let prev = prev_state(prefix, p.d);
        let precision = build_precision_matrix(p.d, p.tau_rho, p.tau_psi)?;
        let b = prev.iter().map(|v| p.a * p.tau_rho * v).collect();
        let log_c = -0.5 * p.a * p.a * p.tau_rho * prev.iter().map(|v| v * v).sum::<f64>();
        Ok((precision, b, log_c))
    }
}

impl ExactProposal<LatticeTarget> for LatticeBootstrap {
    type Kernel = GaussianVectorKernel;

    fn kernel(&self, target: &LatticeTarget, prefix: &dyn Path<Vec<f64>>) -> Result<GaussianVectorKernel> {
        let (precision, b, log_c) = Self::parts(target, prefix)?;
        GaussianVectorKernel::new(&precision, b, log_c)
    }
}

impl StepProposalDensity<LatticeTarget> for LatticeBootstrap {
    fn log_density(&self, target: &LatticeTarget, prefix: &dyn Path<Vec<f64>>, x: &Vec<f64>) -> f64 {
        let p = &target.params;
        let prev = prev_state(prefix, p.d);
        let pot = &target.potentials;
        let mut s = 0.0;
        for l in 0..p.d {
            s += pot.log_rho(x[l], prev[l]);
            if l > 0 {
                s += pot.log_psi(x[l], x[l - 1]);
            }
        }
        s
    }
}

/// The inner problem at one time step: a chain over the `d` components of
/// `x_k` given `x_{k-1}` and `y_k`, whose normalizing constant is
/// `Z_{q_k}(x_{k-1})` of the outer optimal proposal.
#[derive(Debug, Clone)]
pub struct ComponentChain {
    potentials: LatticePotentials,
    params: GaussianLatticeParams,
    x_prev: Option<Vec<f64>>,
    y: Vec<f64>,
}

/// Builds the inner chain for one outer step.
pub fn inner_chain_target(
    params: &GaussianLatticeParams,
    x_prev: Option<&[f64]>,
    y: &[f64],
) -> Result<ComponentChain> {
    params.validate()?;
    if y.len() != params.d {
        return Err(Error::DimensionMismatch { expected: params.d, got: y.len() });
    }
    if let Some(x) = x_prev {
        if x.len() != params.d {
            return Err(Error::DimensionMismatch { expected: params.d, got: x.len() });
        }
    }
    Ok(ComponentChain {
        potentials: lattice_log_potentials(params),
        params: *params,
        x_prev: x_prev.map(<[f64]>::to_vec),
        y: y.to_vec(),
    })
}

impl ComponentChain {
    fn prev_component(&self, l: usize) -> f64 {
        self.x_prev.as_ref().map_or(0.0, |x| x[l])
    }
}

impl SequentialTarget for ComponentChain {
    type State = f64;

    fn horizon(&self) -> usize {
        self.params.d
    }

    fn log_increment(&self, path: &dyn Path<f64>) -> f64 {
        let l = path.len() - 1;
        let x = *path.get(l);
        let mut s = self.potentials.log_phi(x, self.y[l]) + self.potentials.log_rho(x, self.prev_component(l));
        if l > 0 {
            s += self.potentials.log_psi(x, *path.get(l - 1));
        }
        s
    }

    fn markov_window(&self) -> Option<usize> {
        Some(1)
    }
}

/// Bootstrap proposal for the inner chain: the unnormalized ρ factor alone,
/// `exp(-τ_ρ/2 (x_l - a x_{k-1,l})^2)`, with `Z = sqrt(2π/τ_ρ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ComponentPrior;

impl ExactProposal<ComponentChain> for ComponentPrior {
    type Kernel = GaussianSampler;

    fn kernel(&self, target: &ComponentChain, prefix: &dyn Path<f64>) -> Result<GaussianSampler> {
        let l = prefix.len();
        let mean = target.params.a * target.prev_component(l);
        GaussianSampler::new(GaussianKernel::new(mean, target.params.tau_rho)?)
    }
}

impl StepProposalDensity<ComponentChain> for ComponentPrior {
    fn log_density(&self, target: &ComponentChain, prefix: &dyn Path<f64>, x: &f64) -> f64 {
        target.potentials.log_rho(*x, target.prev_component(prefix.len()))
    }
}

/// Splits a time step of [`LatticeTarget`] into a [`ComponentChain`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LatticeDecomposition;

impl Decomposition<LatticeTarget> for LatticeDecomposition {
    type Inner = ComponentChain;

    fn inner_target(&self, outer: &LatticeTarget, prefix: &dyn Path<Vec<f64>>) -> Result<ComponentChain> {
        let k = prefix.len();
        inner_chain_target(&outer.params, prefix.last().map(Vec::as_slice), &outer.y[k])
    }

    fn assemble(&self, inner_path: Vec<f64>) -> Vec<f64> {
        inner_path
    }
}

/// Outer step factory whose samplers are inner bootstrap particle filters
/// over the components; the factory precision is the inner particle count.
pub type LatticeNestedFactory =
    NestedSmcFactory<LatticeDecomposition, AuxRunner<ExactFactory<ComponentPrior>, ComponentPrior, UnitMultiplier>>;

pub fn lattice_nested_factory() -> LatticeNestedFactory {
    NestedSmcFactory {
        decomposition: LatticeDecomposition,
        runner: AuxRunner {
            factory: ExactFactory(ComponentPrior),
            proposal_density: ComponentPrior,
            multiplier: UnitMultiplier,
            precision: 1,
        },
        level: 1,
    }
}

fn write_matrix<W: Write>(mut out: W, prefix: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
    let d = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=d).map(|l| format!("{prefix}_{l}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Writes observations as CSV: header `y_1,...,y_d`, one row per time step.
pub fn write_observations_csv<W: Write>(out: W, y: &[Vec<f64>]) -> std::io::Result<()> {
    write_matrix(out, "y", y)
}

/// Writes latent states as CSV with header `x_1,...,x_d`.
pub fn write_latent_csv<W: Write>(out: W, x: &[Vec<f64>]) -> std::io::Result<()> {
    write_matrix(out, "x", x)
}

/// Reads a CSV written by [`write_observations_csv`].
pub fn read_observations_csv<R: BufRead>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty observation file".into()))?
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let d = header.split(',').count();
    for (l, name) in header.split(',').enumerate() {
        if name.trim() != format!("y_{}", l + 1) {
            return Err(Error::InvalidParameter(format!("unexpected column {name:?}")));
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|e| Error::InvalidParameter(format!("{c:?}: {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: row.len() });
        }
        rows.push(row);
    }
    check_observations(d, &rows)?;
    Ok(rows)
}
