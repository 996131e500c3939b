//! Exact filtering for the Gaussian lattice field.
//!
//! The message `m_k(x_k) = ∫ π_k(x_{1:k}) dx_{1:k-1}` stays of the form
//! `exp(c - ½ x^T P x + h^T x)`. Integrating out `x_{k-1}` against the
//! step-`k` potentials gives, with `P' = P + a²τ_ρ I`,
//!
//! ```text
//! P_k = Σ^{-1} + τ_φ I - a²τ_ρ² P'^{-1}
//! h_k = τ_φ y_k + a τ_ρ P'^{-1} h
//! c_k = c + d/2 log 2π - ½ log|P'| + ½ h^T P'^{-1} h - τ_φ/2 |y_k|²
//! ```
//!
//! and the evidence is `log Z_k = c_k + d/2 log 2π - ½ log|P_k| + ½ h_k^T P_k^{-1} h_k`.
//! After the first step `P_k` is dense, so the recursion uses dense Cholesky
//! factorizations and is capped at [`DENSE_LIMIT`] components.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::models::lattice::{build_precision_matrix, GaussianLatticeParams};

/// Largest dimension the dense recursion accepts.
pub const DENSE_LIMIT: usize = 512;

/// Exact filtering marginals of `x_k | y_{1:k}` and the cumulative log evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMarginals {
    pub mu: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub log_evidence: Vec<f64>,
}

fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or(Error::NotPositiveDefinite)
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Exact filter for the lattice field with observations `y` (`n × d`).
pub fn gaussian_filter(params: &GaussianLatticeParams, y: &[Vec<f64>]) -> Result<FilterMarginals> {
    params.validate()?;
    let d = params.d;
    if d > DENSE_LIMIT {
        return Err(Error::OracleInfeasible(format!(
            "exact Gaussian filter is limited to d <= {DENSE_LIMIT}, got d = {d}"
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidParameter("no observations".into()));
    }
    let half_log_2pi = 0.5 * d as f64 * (2.0 * PI).ln();
    let base = build_precision_matrix(d, params.tau_rho + params.tau_phi, params.tau_psi)?.to_dense();
    let ar = params.a * params.tau_rho;

    let mut out = FilterMarginals {
        mu: Vec::with_capacity(y.len()),
        var: Vec::with_capacity(y.len()),
        log_evidence: Vec::with_capacity(y.len()),
    };
    let mut state: Option<(DMatrix<f64>, DVector<f64>, f64)> = None;
    for yk in y {
        if yk.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: yk.len() });
        }
        let yv = DVector::from_column_slice(yk);
        let obs_const = -0.5 * params.tau_phi * yv.norm_squared();
        let (p, h, c) = match state.take() {
            None => (base.clone(), yv * params.tau_phi, obs_const),
            Some((p, h, c)) => {
                let p_prime = p + DMatrix::identity(d, d) * (params.a * ar);
                let chol = factor(p_prime)?;
                let solved = chol.solve(&h);
                let c_new = c + half_log_2pi - 0.5 * log_det(&chol) + 0.5 * h.dot(&solved) + obs_const;
                let inv = chol.inverse();
                let p_new = &base - inv * (ar * ar);
                let h_new = yv * params.tau_phi + solved * ar;
                (p_new, h_new, c_new)
            }
        };
        let chol = factor(p.clone())?;
        let mean = chol.solve(&h);
        let cov = chol.inverse();
        out.log_evidence
            .push(c + half_log_2pi - 0.5 * log_det(&chol) + 0.5 * h.dot(&mean));
        out.mu.push(mean.iter().copied().collect());
        out.var.push(cov.diagonal().iter().copied().collect());
        state = Some((p, h, c));
    }
    Ok(out)
}
