//! Dense proximal operators and structured solvers.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; every entry point rejects NaN/Inf.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Convergence thresholds tried in turn by the verified SVD and eigensolver.
const SVD_EPS: [f64; 5] = [1e-15, 1e-14, 1e-13, 1e-12, 1e-10];
const SVD_MAX_ITER: usize = 10_000;
/// Relative Frobenius reconstruction error that ends the tolerance search.
const SVD_GOOD_TOL: f64 = 1e-12;
/// Largest accepted relative reconstruction error.
const SVD_RECON_TOL: f64 = 1e-6;

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn ensure_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "threshold must be non-negative, got {tau}"
        )))
    }
}

/// Largest absolute entry (the entrywise infinity norm); 0 for empty matrices.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn l1_norm(m: &Matrix) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Thin SVD with singular values sorted non-increasing.
///
/// Each left singular vector is flipped so that its largest-magnitude entry
/// (lowest index on ties) is positive; the matching row of `vt` follows.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vector,
    pub vt: Matrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, sv) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*sv);
        }
        us * &self.vt
    }
}

fn svd_failure(x: &Matrix) -> Error {
    Error::numeric(
        "svd",
        format!(
            "no convergence on {}x{} input (frobenius {:e}, max |x| {:e})",
            x.nrows(),
            x.ncols(),
            x.norm(),
            max_abs(x)
        ),
    )
}

pub fn svd(x: &Matrix) -> Result<SvdFactors> {
    ensure_finite(x, "svd input")?;
    let k = x.nrows().min(x.ncols());
    if k == 0 {
        return Ok(SvdFactors {
            u: Matrix::zeros(x.nrows(), 0),
            s: Vector::zeros(0),
            vt: Matrix::zeros(0, x.ncols()),
        });
    }
    let (u, s, vt) = checked_svd(x)?;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut out_u = Matrix::zeros(x.nrows(), k);
    let mut out_vt = Matrix::zeros(k, x.ncols());
    let mut out_s = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let sign = sign_of_largest(col.iter().copied());
        out_u.set_column(dst, &(col * sign));
        out_vt.set_row(dst, &(vt.row(src) * sign));
        out_s[dst] = s[src].max(0.0);
    }
    Ok(SvdFactors {
        u: out_u,
        s: out_s,
        vt: out_vt,
    })
}

/// Runs the SVD of `x` and of `x^T` over the tolerance ladder and keeps the
/// factors that reconstruct `x` best. On rank-deficient input nalgebra's
/// result depends erratically on both choices and is sometimes far off.
fn checked_svd(x: &Matrix) -> Result<(Matrix, Vector, Matrix)> {
    let scale = x.norm();
    let xt = x.transpose();
    let mut best: Option<(f64, (Matrix, Vector, Matrix))> = None;
    for eps in SVD_EPS {
        for transposed in [false, true] {
            let input = if transposed { &xt } else { x };
            let Some(dec) = input
                .clone()
                .try_svd_unordered(true, true, eps, SVD_MAX_ITER)
            else {
                continue;
            };
            let (Some(u), Some(vt)) = (dec.u, dec.v_t) else {
                continue;
            };
            let (u, vt) = if transposed {
                (vt.transpose(), u.transpose())
            } else {
                (u, vt)
            };
            let s = dec.singular_values;
            let mut us = u.clone();
            for (j, sv) in s.iter().enumerate() {
                us.column_mut(j).scale_mut(*sv);
            }
            let err = (&us * &vt - x).norm();
            if err.is_finite() && best.as_ref().is_none_or(|(e, _)| err < *e) {
                let done = err <= SVD_GOOD_TOL * scale;
                best = Some((err, (u, s, vt)));
                if done {
                    break;
                }
            }
        }
        if best
            .as_ref()
            .is_some_and(|(e, _)| *e <= SVD_GOOD_TOL * scale)
        {
            break;
        }
    }
    match best {
        Some((err, f)) if err <= SVD_RECON_TOL * scale => Ok(f),
        _ => Err(svd_failure(x)),
    }
}

fn sign_of_largest(values: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0_f64;
    let mut best_abs = -1.0_f64;
    for v in values {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn nuclear_norm(x: &Matrix) -> Result<f64> {
    Ok(svd(x)?.s.sum())
}

/// Symmetric eigendecomposition, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vector,
    pub vectors: Matrix,
}

/// Eigendecomposition of a symmetric matrix (the input is symmetrized first).
///
/// Eigenvalues come back ascending; each eigenvector has its
/// largest-magnitude entry positive.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    ensure_finite(m, "eigen input")?;
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.norm();
    let mut best: Option<(f64, _)> = None;
    for eps in SVD_EPS {
        let Some(d) = sym.clone().try_symmetric_eigen(eps, SVD_MAX_ITER) else {
            continue;
        };
        let err = (d.recompose() - &sym).norm();
        if err.is_finite() && best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, d));
            if err <= SVD_GOOD_TOL * scale {
                break;
            }
        }
    }
    let dec = best
        .filter(|(err, _)| *err <= SVD_RECON_TOL * scale)
        .map(|(_, d)| d)
        .ok_or_else(|| {
            Error::numeric(
                "symmetric eigendecomposition",
                format!("no convergence on {n}x{n} input (frobenius {scale:e})"),
            )
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dec.eigenvalues[a]
            .total_cmp(&dec.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let mut values = Vector::zeros(n);
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = dec.eigenvalues[src];
        let col = dec.eigenvectors.column(src);
        let sign = sign_of_largest(col.iter().copied());
        vectors.set_column(dst, &(col * sign));
    }
    Ok(SymEigen { values, vectors })
}

/// Entrywise shrinkage `sign(x) * max(|x| - tau, 0)`: the proximal map of `tau * ||.||_1`.
pub fn soft_threshold(x: &Matrix, tau: f64) -> Result<Matrix> {
    ensure_tau(tau)?;
    ensure_finite(x, "soft_threshold input")?;
    Ok(x.map(|v| shrink(v, tau)))
}

#[inline]
pub(crate) fn shrink(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Singular value thresholding: the proximal map of `tau * ||.||_*`.
pub fn svt(x: &Matrix, tau: f64) -> Result<Matrix> {
    ensure_tau(tau)?;
    ensure_finite(x, "svt input")?;
    let mut f = svd(x)?;
    if f.s.iter().all(|&s| s <= tau) {
        return Ok(Matrix::zeros(x.nrows(), x.ncols()));
    }
    f.s.apply(|s| *s = (*s - tau).max(0.0));
    Ok(f.reconstruct())
}

/// Column-wise shrinkage: the proximal map of `tau * ||.||_{2,1}`.
pub fn l21_prox(x: &Matrix, tau: f64) -> Result<Matrix> {
    ensure_tau(tau)?;
    ensure_finite(x, "l21_prox input")?;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm <= tau {
            col.fill(0.0);
        } else {
            col.scale_mut(1.0 - tau / norm);
        }
    }
    Ok(out)
}

fn symmetrized(m: &Matrix, what: &str) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-8 * max_abs(m).max(1.0) {
        return Err(Error::invalid(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Solves `h * Y + Y * q = c` for symmetric `h` (p x p) and `q` (r x r).
///
/// Both operands are diagonalized; the system decouples entrywise in the
/// eigenbases. Fails if some eigenvalue pair sums to (nearly) zero.
pub fn solve_sylvester(h: &Matrix, q: &Matrix, c: &Matrix) -> Result<Matrix> {
    sylvester_with_floors(h, q, c, f64::NEG_INFINITY, f64::NEG_INFINITY)
}

/// Like [`solve_sylvester`] for operands known to satisfy `H >= h_floor I`
/// and `Q >= q_floor I`: computed eigenvalues are clamped to those floors,
/// which removes rounding noise when the operands are badly scaled.
pub fn solve_sylvester_bounded(
    h: &Matrix,
    q: &Matrix,
    c: &Matrix,
    h_floor: f64,
    q_floor: f64,
) -> Result<Matrix> {
    sylvester_with_floors(h, q, c, h_floor, q_floor)
}

fn sylvester_with_floors(
    h: &Matrix,
    q: &Matrix,
    c: &Matrix,
    h_floor: f64,
    q_floor: f64,
) -> Result<Matrix> {
    ensure_finite(h, "sylvester H")?;
    ensure_finite(q, "sylvester Q")?;
    ensure_finite(c, "sylvester C")?;
    let h = symmetrized(h, "sylvester H")?;
    let q = symmetrized(q, "sylvester Q")?;
    if c.nrows() != h.nrows() || c.ncols() != q.nrows() {
        return Err(Error::invalid(format!(
            "sylvester shapes: H {}x{}, Q {}x{}, C {}x{}",
            h.nrows(),
            h.ncols(),
            q.nrows(),
            q.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    let mut eh = sym_eigen(&h)?;
    let mut eq = sym_eigen(&q)?;
    eh.values.apply(|v| *v = v.max(h_floor));
    eq.values.apply(|v| *v = v.max(q_floor));
    let scale = eh
        .values
        .iter()
        .chain(eq.values.iter())
        .fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let mut ct = eh.vectors.transpose() * c * &eq.vectors;
    for j in 0..ct.ncols() {
        for i in 0..ct.nrows() {
            let sum = eh.values[i] + eq.values[j];
            if h_floor + q_floor <= 0.0 && sum.abs() < 1e-12 * scale {
                return Err(Error::SingularSystem {
                    row: i,
                    col: j,
                    left: eh.values[i],
                    right: eq.values[j],
                    sum,
                });
            }
            ct[(i, j)] /= sum;
        }
    }
    Ok(&eh.vectors * ct * eq.vectors.transpose())
}

/// Orthonormal basis of the column space of `p` (Householder QR).
///
/// Column `k` of the result spans the same flag as the first `k` input
/// columns; signs are fixed so the first entry above 1e-12 in magnitude is
/// positive.
pub fn orthonormalize(p: &Matrix) -> Result<Matrix> {
    ensure_finite(p, "orthonormalize input")?;
    let (m, n) = p.shape();
    if n == 0 {
        return Ok(p.clone());
    }
    if n > m {
        return Err(Error::RankDeficient { rank: m, cols: n });
    }
    let qr = p.clone().qr();
    let r = qr.r();
    let diag_max = (0..n).fold(0.0_f64, |acc, i| acc.max(r[(i, i)].abs()));
    let rank = (0..n)
        .filter(|&i| r[(i, i)].abs() > 1e-10 * diag_max)
        .count();
    if diag_max == 0.0 || rank < n {
        return Err(Error::RankDeficient { rank, cols: n });
    }
    let mut q = qr.q();
    for mut col in q.column_iter_mut() {
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok(q)
}

/// Rescales every column to unit norm. Columns with norm below 1e-12 are
/// left untouched and their indices returned.
pub fn normalize_columns(m: &mut Matrix) -> Vec<usize> {
    let mut zero = Vec::new();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm < 1e-12 {
            zero.push(j);
        } else {
            col.unscale_mut(norm);
        }
    }
    zero
}
