//! l1-regularized quadratic coding by feature-sign search.
//!
//! Every problem is put in the canonical form
//! `min_a  a^T H a - 2 b^T a + lambda1 ||a||_1` with `H` positive definite.

use crate::config::TrainConfig;
use crate::dict_learn::StructuredDictionary;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

#[derive(Debug, Clone)]
pub struct QuadraticL1Problem {
    pub hessian: Matrix,
    pub linear: Vector,
    pub lambda1: f64,
    /// Multiple of the identity added to make `hessian` positive definite.
    pub ridge_applied: f64,
}

/// Smallest eigenvalue treated as zero, relative to the spectral scale.
const EIG_FLOOR_REL: f64 = 1e-12;
const RIDGE_MARGIN: f64 = 1e-8;

fn ridge_for(min_eig: f64, max_abs_eig: f64) -> f64 {
    if min_eig <= EIG_FLOOR_REL * max_abs_eig.max(1.0) {
        min_eig.abs() + RIDGE_MARGIN
    } else {
        0.0
    }
}

impl QuadraticL1Problem {
    /// Builds a problem, adding a ridge when `hessian` is not safely
    /// positive definite.
    pub fn new(hessian: Matrix, linear: Vector, lambda1: f64) -> Result<Self> {
        if !hessian.is_square() || hessian.nrows() != linear.len() {
            return Err(Error::invalid(format!(
                "hessian {:?} does not match linear term of length {}",
                hessian.shape(),
                linear.len()
            )));
        }
        let eig = linalg::sym_eigen(&hessian)?;
        let n = linear.len();
        let (lo, hi) = if n == 0 {
            (1.0, 1.0)
        } else {
            (
                eig.values[0],
                eig.values[0].abs().max(eig.values[n - 1].abs()),
            )
        };
        Self::with_spectrum(hessian, linear, lambda1, lo, hi)
    }

    fn with_spectrum(
        mut hessian: Matrix,
        linear: Vector,
        lambda1: f64,
        min_eig: f64,
        max_abs_eig: f64,
    ) -> Result<Self> {
        if !(lambda1.is_finite() && lambda1 >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda1 must be >= 0, got {lambda1}"
            )));
        }
        linalg::ensure_finite(&hessian, "coding hessian")?;
        if !linear.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("coding linear term"));
        }
        let ridge = ridge_for(min_eig, max_abs_eig);
        if ridge > 0.0 {
            for i in 0..hessian.nrows() {
                hessian[(i, i)] += ridge;
            }
        }
        Ok(QuadraticL1Problem {
            hessian,
            linear,
            lambda1,
            ridge_applied: ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, alpha: &Vector) -> f64 {
        let quad = alpha.dot(&(&self.hessian * alpha));
        quad - 2.0 * self.linear.dot(alpha)
            + self.lambda1 * alpha.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part, `2 (H a - b)`.
    pub fn smooth_gradient(&self, alpha: &Vector) -> Vector {
        (&self.hessian * alpha - &self.linear) * 2.0
    }

    /// Largest violation of the first-order optimality conditions.
    pub fn optimality_violation(&self, alpha: &Vector) -> f64 {
        let g = self.smooth_gradient(alpha);
        let mut worst = 0.0_f64;
        for (gj, aj) in g.iter().zip(alpha.iter()) {
            let v = if *aj != 0.0 {
                (gj + self.lambda1 * aj.signum()).abs()
            } else {
                (gj.abs() - self.lambda1).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct CodingResult {
    pub alpha: Vector,
    pub objective: f64,
    pub active_set_size: usize,
}

/// Solves `H[S,S] x = r` on the active set with one refinement step.
fn solve_active(h: &Matrix, active: &[usize], rhs: &Vector) -> Result<Vector> {
    let k = active.len();
    let sub = Matrix::from_fn(k, k, |i, j| h[(active[i], active[j])]);
    let chol = sub.clone().cholesky().ok_or_else(|| {
        Error::numeric(
            "feature-sign",
            format!("active-set system of size {k} is not positive definite"),
        )
    })?;
    let mut x = chol.solve(rhs);
    let resid = rhs - &sub * &x;
    x += chol.solve(&resid);
    Ok(x)
}

/// Feature-sign search.
///
/// Alternates between activating the zero coordinate with the steepest
/// violating gradient and exact minimization on the current sign pattern
/// followed by a discrete line search over zero crossings. Capped at
/// `10 * C` feature-sign steps.
pub fn feature_sign_solve(prob: &QuadraticL1Problem) -> Result<CodingResult> {
    let n = prob.dim();
    let lambda = prob.lambda1;
    let scale = 1.0 + lambda + prob.linear.amax();
    let act_tol = 1e-12 * scale;
    let max_steps = 10 * n.max(1);

    let mut x = Vector::zeros(n);
    let mut theta = vec![0.0_f64; n];
    let mut steps = 0usize;

    loop {
        let g = prob.smooth_gradient(&x);
        // Step 2: activate the most violating zero coordinate.
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..n {
            if x[j] == 0.0 && g[j].abs() > lambda + act_tol {
                match pick {
                    Some((_, best)) if g[j].abs() <= best => {}
                    _ => pick = Some((j, g[j].abs())),
                }
            }
        }
        let Some((j, _)) = pick else {
            break;
        };
        theta[j] = -g[j].signum();

        // Steps 3-4: feature-sign steps until the active set is optimal.
        loop {
            steps += 1;
            if steps > max_steps {
                let objective = prob.objective(&x);
                return Err(Error::NonConvergence {
                    steps: max_steps,
                    best: x.iter().copied().collect(),
                    objective,
                });
            }
            let active: Vec<usize> = (0..n).filter(|&k| theta[k] != 0.0).collect();
            let rhs = Vector::from_iterator(
                active.len(),
                active
                    .iter()
                    .map(|&k| prob.linear[k] - 0.5 * lambda * theta[k]),
            );
            let x_new_active = solve_active(&prob.hessian, &active, &rhs)?;
            let mut x_new = Vector::zeros(n);
            for (i, &k) in active.iter().enumerate() {
                x_new[k] = x_new_active[i];
            }

            // Discrete line search over the segment x -> x_new.
            let mut best = x_new.clone();
            let mut best_obj = prob.objective(&x_new);
            for &k in &active {
                if x[k] != 0.0 && x[k].signum() != x_new[k].signum() {
                    let t = x[k] / (x[k] - x_new[k]);
                    let mut cand = &x + (&x_new - &x) * t;
                    cand[k] = 0.0;
                    let obj = prob.objective(&cand);
                    if obj < best_obj {
                        best_obj = obj;
                        best = cand;
                    }
                }
            }
            let stalled = best == x;
            x = best;
            for k in 0..n {
                if x[k].abs() <= f64::EPSILON * scale * 1e-3 {
                    x[k] = 0.0;
                }
                theta[k] = if x[k] == 0.0 { 0.0 } else { x[k].signum() };
            }

            let g = prob.smooth_gradient(&x);
            let nonzero_ok = (0..n)
                .filter(|&k| x[k] != 0.0)
                .all(|k| (g[k] + lambda * theta[k]).abs() <= 1e-10 * scale);
            if nonzero_ok || stalled {
                break;
            }
        }
    }

    let active_set_size = x.iter().filter(|v| **v != 0.0).count();
    Ok(CodingResult {
        objective: prob.objective(&x),
        alpha: x,
        active_set_size,
    })
}

/// Caches the sample-independent part of the training-time coding problem.
///
/// For a sample `p` of class `i` with projection `y`:
/// `H = D^T D + sum_j M_j D^T D M_j + lambda2 L_pp I` and
/// `b = D^T y + M_i D^T y - lambda2 sum_{q != p} L_qp a_q`,
/// where `M_j` selects the rows of class `j`.
#[derive(Debug, Clone)]
pub struct TrainingCoder {
    base: Matrix,
    dt: Matrix,
    offsets: Vec<usize>,
    min_eig: f64,
    max_abs_eig: f64,
    lambda1: f64,
    lambda2: f64,
}

impl TrainingCoder {
    pub fn new(dict: &StructuredDictionary, lambda1: f64, lambda2: f64) -> Result<Self> {
        let dt = dict.atoms.transpose();
        let gram = &dt * &dict.atoms;
        let mut base = gram.clone();
        for c in 0..dict.num_classes() {
            let r = dict.range(c);
            let mut blk = base.view_mut((r.start, r.start), (r.len(), r.len()));
            blk += gram.view((r.start, r.start), (r.len(), r.len()));
        }
        let eig = linalg::sym_eigen(&base)?;
        let n = eig.values.len();
        Ok(TrainingCoder {
            min_eig: eig.values[0],
            max_abs_eig: eig.values[0].abs().max(eig.values[n - 1].abs()),
            base,
            dt,
            offsets: dict.class_offsets.clone(),
            lambda1,
            lambda2,
        })
    }

    pub fn assemble(
        &self,
        y: &Vector,
        class: usize,
        a_matrix: &Matrix,
        l_c: &Matrix,
        sample: usize,
    ) -> Result<QuadraticL1Problem> {
        let shift = self.lambda2 * l_c[(sample, sample)];
        let mut h = self.base.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += shift;
        }
        let dty = &self.dt * y;
        let mut b = dty.clone();
        let (lo, hi) = (self.offsets[class], self.offsets[class + 1]);
        for k in lo..hi {
            b[k] += dty[k];
        }
        if self.lambda2 != 0.0 {
            let mut coupling = a_matrix * l_c.column(sample);
            coupling -= a_matrix.column(sample) * l_c[(sample, sample)];
            b -= coupling * self.lambda2;
        }
        QuadraticL1Problem::with_spectrum(
            h,
            b,
            self.lambda1,
            self.min_eig + shift,
            self.max_abs_eig + shift.abs(),
        )
    }
}

/// Coding problem for training sample `sample` (a column of `a_matrix` and
/// of `l_c`) belonging to class `class`.
pub fn assemble_training_problem(
    px_col: &Vector,
    dict: &StructuredDictionary,
    class: usize,
    a_matrix: &Matrix,
    l_c: &Matrix,
    sample: usize,
    cfg: &TrainConfig,
) -> Result<QuadraticL1Problem> {
    if px_col.len() != dict.dim()
        || a_matrix.nrows() != dict.num_atoms()
        || l_c.shape() != (a_matrix.ncols(), a_matrix.ncols())
        || sample >= a_matrix.ncols()
        || class >= dict.num_classes()
    {
        return Err(Error::invalid(
            "inconsistent shapes for the training coding problem",
        ));
    }
    TrainingCoder::new(dict, cfg.lambda1, cfg.lambda2)?
        .assemble(px_col, class, a_matrix, l_c, sample)
}

/// Codes a raw test sample: `min_a ||P^T x - D a||^2 + xi ||a||_1`.
pub fn code_test_sample(
    x_test: &Vector,
    projection: &Matrix,
    dict: &StructuredDictionary,
    xi: f64,
) -> Result<CodingResult> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::invalid(format!("xi must be positive, got {xi}")));
    }
    if x_test.len() != projection.nrows() {
        return Err(Error::invalid(format!(
            "test sample has {} entries, projection expects {}",
            x_test.len(),
            projection.nrows()
        )));
    }
    let y = projection.transpose() * x_test;
    let dt = dict.atoms.transpose();
    let prob = QuadraticL1Problem::new(&dt * &dict.atoms, &dt * y, xi)?;
    feature_sign_solve(&prob)
}
