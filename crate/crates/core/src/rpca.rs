//! Robust PCA by inexact augmented Lagrange multipliers.
//!
//! Splits a data matrix into a low-rank part plus an entrywise-sparse error:
//! `min ||L||_* + eta ||E||_1  s.t.  X = L + E`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpcaConfig {
    /// Weight on the sparse term.
    pub eta: f64,
    /// Initial penalty; `None` uses `1.25 / sigma_1(X)`.
    pub mu0: Option<f64>,
    pub rho: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl RpcaConfig {
    /// Conventional settings with `eta = 1 / sqrt(max(rows, cols))`.
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        RpcaConfig {
            eta: 1.0 / (rows.max(cols).max(1) as f64).sqrt(),
            mu0: None,
            rho: 1.5,
            max_iter: 500,
            tol: 1e-7,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.eta > 0.0
            && self.eta.is_finite()
            && self.mu0.is_none_or(|m| m > 0.0 && m.is_finite())
            && self.rho > 1.0
            && self.rho.is_finite()
            && self.max_iter > 0
            && self.tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad RPCA config {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RpcaResult {
    pub low_rank: Matrix,
    pub sparse: Matrix,
    pub iterations: usize,
    /// `||X - L - E||_F / ||X||_F` at exit.
    pub final_residual: f64,
    pub converged: bool,
    /// Absolute feasibility gap `||X - L - E||_F` after every iteration.
    pub gap_history: Vec<f64>,
}

pub fn rpca_decompose(x: &Matrix, cfg: &RpcaConfig) -> Result<RpcaResult> {
    cfg.validate()?;
    ensure_finite(x, "rpca input")?;
    let (m, n) = x.shape();
    let x_norm = x.norm();
    if x_norm == 0.0 {
        return Ok(RpcaResult {
            low_rank: Matrix::zeros(m, n),
            sparse: Matrix::zeros(m, n),
            iterations: 0,
            final_residual: 0.0,
            converged: true,
            gap_history: Vec::new(),
        });
    }

    let sigma1 = linalg::svd(x)?.s[0];
    let mut mu = cfg.mu0.unwrap_or(1.25 / sigma1);
    let mu_max = mu * 1e7;
    // Dual initialization scaled so the multiplier starts dual-feasible.
    let dual_scale = sigma1.max(linalg::max_abs(x) / cfg.eta);
    let mut y = x / dual_scale;
    let mut low = Matrix::zeros(m, n);
    let mut sparse = Matrix::zeros(m, n);
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;

    for it in 1..=cfg.max_iter {
        let inv_mu = 1.0 / mu;
        low = linalg::svt(&(x - &sparse + &y * inv_mu), inv_mu)?;
        sparse = linalg::soft_threshold(&(x - &low + &y * inv_mu), cfg.eta * inv_mu)?;
        let gap = x - &low - &sparse;
        let gap_norm = gap.norm();
        history.push(gap_norm);
        residual = gap_norm / x_norm;
        if residual < cfg.tol {
            return Ok(RpcaResult {
                low_rank: low,
                sparse,
                iterations: it,
                final_residual: residual,
                converged: true,
                gap_history: history,
            });
        }
        y += gap * mu;
        mu = (mu * cfg.rho).min(mu_max);
    }

    Ok(RpcaResult {
        low_rank: low,
        sparse,
        iterations: cfg.max_iter,
        final_residual: residual,
        converged: false,
        gap_history: history,
    })
}
