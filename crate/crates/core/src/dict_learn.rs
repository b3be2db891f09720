//! Structured dictionary and the per-class sub-dictionary update.
//!
//! The update solves, for one class `i` with projected samples `Y = P^T X_i`,
//!
//! ```text
//! min ||Z||_1 + lambda3 ||J||_* + beta ||E||_{2,1} + lambda r(D_i)
//! s.t. Y = D_i A + E,  D_i = J,  A = Z
//! ```
//!
//! by inexact ALM: one pass over the blocks `Z, A, J, D_i, E` per iteration,
//! then dual ascent and a geometric penalty increase.

use std::ops::Range;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredDictionary {
    /// `d x C`, unit-norm columns.
    pub atoms: Matrix,
    /// `K + 1` column offsets; class `i` owns `offsets[i]..offsets[i + 1]`.
    pub class_offsets: Vec<usize>,
}

impl StructuredDictionary {
    pub fn new(atoms: Matrix, class_offsets: Vec<usize>) -> Result<Self> {
        let ok = class_offsets.len() >= 2
            && class_offsets[0] == 0
            && class_offsets.windows(2).all(|w| w[0] < w[1])
            && *class_offsets.last().unwrap() == atoms.ncols();
        if !ok {
            return Err(Error::invalid(format!(
                "class offsets {:?} do not partition {} atoms",
                class_offsets,
                atoms.ncols()
            )));
        }
        Ok(StructuredDictionary {
            atoms,
            class_offsets,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_offsets.len() - 1
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn range(&self, class: usize) -> Range<usize> {
        self.class_offsets[class]..self.class_offsets[class + 1]
    }

    pub fn block(&self, class: usize) -> Matrix {
        let r = self.range(class);
        self.atoms.columns(r.start, r.len()).into_owned()
    }

    pub fn set_block(&mut self, class: usize, block: &Matrix) {
        let r = self.range(class);
        self.atoms.columns_mut(r.start, r.len()).copy_from(block);
    }

    /// Largest deviation of a column norm from one.
    pub fn max_norm_deviation(&self) -> f64 {
        self.atoms
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Inner-solver state for one sub-dictionary update.
#[derive(Debug, Clone)]
pub struct AlmState {
    pub z: Matrix,
    pub j: Matrix,
    pub e: Matrix,
    pub t1: Matrix,
    pub t2: Matrix,
    pub t3: Matrix,
    pub mu: f64,
    pub iter: usize,
}

pub const ALM_MU0: f64 = 1e-6;
pub const ALM_MU_MAX: f64 = 1e30;
pub const ALM_RHO: f64 = 1.1;

/// The three stopping residuals: `||D_i - J||_inf`, `||Y - D_i A - E||_inf`, `||A - Z||_inf`.
pub type StopResiduals = [f64; 3];

#[derive(Debug, Clone)]
pub struct AlmOutcome {
    pub dict_block: Matrix,
    pub coef_block: Matrix,
    pub error: Matrix,
    pub state: AlmState,
    pub converged: bool,
    pub history: Vec<StopResiduals>,
    /// Columns of the returned block whose norm collapsed below 1e-12.
    pub zero_columns: Vec<usize>,
}

/// Runs the inexact ALM update for class `class`.
///
/// `px_i` is `P^T X_i` (`d x n_i`); `a_i_full` is the coding of class `i`
/// over the whole dictionary (`C x n_i`). Returns the new `D_i`, the new
/// diagonal coefficient block `A_i^i`, and the error term `E_i`.
pub fn update_subdictionary(
    px_i: &Matrix,
    dict: &StructuredDictionary,
    class: usize,
    a_i_full: &Matrix,
    cfg: &TrainConfig,
) -> Result<AlmOutcome> {
    if class >= dict.num_classes() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    if px_i.nrows() != dict.dim() || a_i_full.shape() != (dict.num_atoms(), px_i.ncols()) {
        return Err(Error::invalid(format!(
            "shapes: P^T X_i {:?}, dictionary {:?}, A_i {:?}",
            px_i.shape(),
            dict.atoms.shape(),
            a_i_full.shape()
        )));
    }
    let (d, n_i) = px_i.shape();
    let own = dict.range(class);
    let c_i = own.len();
    let lambda = cfg.lambda_r;

    let mut d_i = dict.block(class);
    let mut a = a_i_full.rows(own.start, c_i).into_owned();

    // Fixed pieces: sum_{j != i} D_j D_j^T and sum_{j != i} D_j A_i^j.
    let mut others_gram = Matrix::zeros(d, d);
    let mut others_recon = Matrix::zeros(d, n_i);
    for j in (0..dict.num_classes()).filter(|&j| j != class) {
        let r = dict.range(j);
        let d_j = dict.atoms.columns(r.start, r.len());
        others_gram += d_j * d_j.transpose();
        others_recon += d_j * a_i_full.rows(r.start, r.len());
    }
    let target_minus_others = px_i - &others_recon;

    let mut st = AlmState {
        z: a.clone(),
        j: Matrix::zeros(d, c_i),
        e: Matrix::zeros(d, n_i),
        t1: Matrix::zeros(d, n_i),
        t2: Matrix::zeros(d, c_i),
        t3: Matrix::zeros(c_i, n_i),
        mu: ALM_MU0,
        iter: 0,
    };
    let eye_c = Matrix::identity(c_i, c_i);
    let mut history = Vec::new();
    let mut converged = false;
    let mut zero_columns = Vec::new();

    while st.iter < cfg.inner_max_iter {
        st.iter += 1;
        let mu = st.mu;
        let inv_mu = 1.0 / mu;

        st.z = linalg::soft_threshold(&(&a + &st.t3 * inv_mu), inv_mu)?;

        let dt = d_i.transpose();
        let gram = &dt * &d_i + &eye_c;
        let rhs = &dt * (px_i - &st.e) + &st.z + (&dt * &st.t1 - &st.t3) * inv_mu;
        a = gram
            .cholesky()
            .ok_or_else(|| {
                Error::numeric("coefficient update", "D_i^T D_i + I not positive definite")
            })?
            .solve(&rhs);

        st.j = linalg::svt(&(&d_i + &st.t2 * inv_mu), cfg.lambda3 * inv_mu)?;
        linalg::normalize_columns(&mut st.j);

        let w = 2.0 * lambda * inv_mu;
        let aat = &a * a.transpose();
        let h = &others_gram * w;
        let q = &aat * (w + 1.0) + &eye_c;
        let at = a.transpose();
        let c = (&target_minus_others * &at) * w
            + (px_i - &st.e) * &at
            + &st.j
            + (&st.t1 * &at - &st.t2) * inv_mu;
        // H >= 0 and Q >= I by construction.
        d_i = linalg::solve_sylvester_bounded(&h, &q, &c, 0.0, 1.0)?;
        zero_columns = linalg::normalize_columns(&mut d_i);

        let recon = &d_i * &a;
        st.e = linalg::l21_prox(&(px_i - &recon + &st.t1 * inv_mu), cfg.beta * inv_mu)?;

        let gap_x = px_i - &recon - &st.e;
        let gap_d = &d_i - &st.j;
        let gap_a = &a - &st.z;
        st.t1 += &gap_x * mu;
        st.t2 += &gap_d * mu;
        st.t3 += &gap_a * mu;
        st.mu = (mu * ALM_RHO).min(ALM_MU_MAX);

        let res = [
            linalg::max_abs(&gap_d),
            linalg::max_abs(&gap_x),
            linalg::max_abs(&gap_a),
        ];
        history.push(res);
        if !res.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(
                "sub-dictionary ALM",
                format!("non-finite residual at inner iteration {}", st.iter),
            ));
        }
        if res.iter().all(|&v| v < cfg.eps_inner) {
            converged = true;
            break;
        }
    }

    Ok(AlmOutcome {
        dict_block: d_i,
        coef_block: a,
        error: st.e.clone(),
        state: st,
        converged,
        history,
        zero_columns,
    })
}
