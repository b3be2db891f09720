use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which end of the spectrum the projection update keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EigSelect {
    /// Minimizers of the trace objective.
    #[default]
    Smallest,
    Largest,
}

/// Every scalar of the training model and solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Sparsity weight on the coefficients.
    pub lambda1: f64,
    /// Coefficient-graph weight.
    pub lambda2: f64,
    /// Nuclear-norm weight on each sub-dictionary.
    pub lambda3: f64,
    /// Projection-graph weight.
    pub delta: f64,
    /// Column-sparse error weight inside the dictionary update.
    pub beta: f64,
    /// Weight of the discriminative residual inside the dictionary update.
    pub lambda_r: f64,
    /// Projection interpolation step, in (0, 1].
    pub gamma: f64,
    /// RPCA sparse weight; `None` uses `1/sqrt(max(m, n_i))` per class.
    pub eta: Option<f64>,
    /// Test-time sparsity weight.
    pub xi: f64,
    /// Weight of the coefficient-mean term in the class residual.
    pub omega: f64,
    /// Same-class neighbors; `None` uses `min(n_i - 1, 15)`.
    pub k1: Option<usize>,
    /// Different-class neighbors; `None` uses `n_i - 1`.
    pub k2: Option<usize>,
    pub heat_t: f64,
    /// Projected dimension; `None` uses 30% of the input dimension.
    pub d: Option<usize>,
    /// Atoms per class; `None` uses the class's training size.
    pub atoms_per_class: Option<usize>,
    pub outer_max_iter: usize,
    pub inner_max_iter: usize,
    pub eps_inner: f64,
    pub outer_tol: f64,
    pub eig_select: EigSelect,
    /// Scale every sample (training and test) to unit l2 norm first.
    pub normalize_samples: bool,
    /// Reject a sub-dictionary or projection update that raises the
    /// objective; projection steps are retried with halved `gamma` first.
    pub monotone_guard: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 1.0,
            delta: 1.0,
            beta: 0.1,
            lambda_r: 1.0,
            gamma: 0.1,
            eta: None,
            xi: 0.01,
            omega: 0.01,
            k1: None,
            k2: None,
            heat_t: 1.0,
            d: None,
            atoms_per_class: None,
            outer_max_iter: 10,
            inner_max_iter: 500,
            eps_inner: 1e-8,
            outer_tol: 1e-4,
            eig_select: EigSelect::Smallest,
            normalize_samples: true,
            monotone_guard: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Projected dimension for `m`-dimensional inputs.
    pub fn projected_dim(&self, m: usize) -> usize {
        self.d.unwrap_or_else(|| ((3 * m) / 10).max(1))
    }

    /// Checks every scalar; `m` is the input dimension.
    pub fn validate(&self, m: usize) -> Result<()> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("delta", self.delta),
            ("beta", self.beta),
            ("lambda_r", self.lambda_r),
            ("xi", self.xi),
            ("omega", self.omega),
        ];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Validation(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Validation(format!("eta must be > 0, got {eta}")));
            }
        }
        if !(self.heat_t > 0.0 && self.heat_t.is_finite()) {
            return Err(Error::Validation(format!(
                "heat_t must be > 0, got {}",
                self.heat_t
            )));
        }
        if self.k1 == Some(0) || self.k2 == Some(0) {
            return Err(Error::Validation("k1 and k2 must be >= 1".into()));
        }
        let d = self.projected_dim(m);
        if d == 0 || d >= m {
            return Err(Error::Validation(format!(
                "projected dimension must satisfy 1 <= d < m, got d={d}, m={m}"
            )));
        }
        if self.atoms_per_class == Some(0) {
            return Err(Error::Validation("atoms_per_class must be >= 1".into()));
        }
        if self.outer_max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::Validation("iteration caps must be >= 1".into()));
        }
        if !(self.eps_inner > 0.0 && self.outer_tol >= 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        Ok(())
    }
}
