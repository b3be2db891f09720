//! Orthonormal projection: LPP initialization and the damped eigen-update.

use crate::config::EigSelect;
use crate::dict_learn::StructuredDictionary;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// `m x d` projection with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub p: Matrix,
}

impl Projection {
    pub fn new(p: Matrix) -> Result<Self> {
        let d = p.ncols();
        let dev = linalg::max_abs(&(p.transpose() * &p - Matrix::identity(d, d)));
        if dev >= 1e-8 {
            return Err(Error::invalid(format!(
                "projection columns are not orthonormal (deviation {dev:e})"
            )));
        }
        Ok(Projection { p })
    }

    pub fn input_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.p.ncols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        let d = self.p.ncols();
        linalg::max_abs(&(self.p.transpose() * &self.p - Matrix::identity(d, d)))
    }
}

/// Locality preserving projection for graph Laplacian `l_p_norm`.
///
/// Works inside the principal subspace `U_r` of `X` (singular values above
/// `1e-10 sigma_1`): takes the `d` generalized eigenvectors of
/// `(X L X^T, X X^T)` with the smallest eigenvalues there, then
/// orthonormalizes. When `d > r` the basis is completed with the
/// orthogonal complement of the data span.
pub fn lpp_init(x: &Matrix, l_p_norm: &Matrix, d: usize) -> Result<Projection> {
    let (m, n) = x.shape();
    if d == 0 || d >= m || d + 1 > n {
        return Err(Error::invalid(format!(
            "projected dimension {d} needs 1 <= d < m = {m} and d <= N - 1 = {}",
            n.saturating_sub(1)
        )));
    }
    if l_p_norm.shape() != (n, n) {
        return Err(Error::invalid(format!(
            "Laplacian is {:?}, expected {n}x{n}",
            l_p_norm.shape()
        )));
    }
    let f = linalg::svd(x)?;
    let s1 = f.s.get(0).copied().unwrap_or(0.0);
    let r =
        f.s.iter()
            .take_while(|&&s| s1 > 0.0 && s > 1e-10 * s1)
            .count();
    if r == 0 {
        return Err(Error::numeric("lpp_init", "training matrix is zero"));
    }
    let u_r = f.u.columns(0, r).into_owned();

    // In U_r coordinates X X^T is diag(s^2), so the generalized problem
    // reduces to an ordinary one for S^{-1} U_r^T X L X^T U_r S^{-1}.
    let xr = u_r.transpose() * x;
    let inv_s = Matrix::from_diagonal(&f.s.rows(0, r).map(|v| 1.0 / v));
    let c = &inv_s * (&xr * l_p_norm * xr.transpose()) * &inv_s;
    let eig = linalg::sym_eigen(&c)?;
    let take = d.min(r);
    let mut v = Matrix::zeros(m, d);
    v.columns_mut(0, take)
        .copy_from(&(&u_r * &inv_s * eig.vectors.columns(0, take)));
    if d > r {
        // Complete with coordinate axes projected off the data span.
        let mut basis = linalg::orthonormalize(&v.columns(0, take).into_owned())?;
        let mut axis = 0;
        while basis.ncols() < d {
            let mut e = Vector::zeros(m);
            e[axis] = 1.0;
            axis += 1;
            let resid = &e - &basis * (basis.transpose() * &e);
            if resid.norm() > 1e-6 {
                let k = basis.ncols();
                basis = basis.insert_column(k, 0.0);
                basis.set_column(k, &resid.normalize());
            }
        }
        return Ok(Projection { p: basis });
    }
    Ok(Projection {
        p: linalg::orthonormalize(&v)?,
    })
}

/// `D_hat` and `Z_hat` with `||P^T [X, X] - D_hat Z_hat||_F^2` equal to
/// `sum_i ||P^T X_i - D A_i||^2 + ||P^T X_i - D_i A_i^i||^2`.
///
/// `D_hat = [D, D_1, ..., D_K]` (`d x 2C`) and
/// `Z_hat = diag(A, blockdiag(A_1^1, ..., A_K^K))` (`2C x 2N`).
#[derive(Debug, Clone)]
pub struct StackedCoding {
    pub d_hat: Matrix,
    pub z_hat: Matrix,
}

impl StackedCoding {
    pub fn product(&self) -> Matrix {
        &self.d_hat * &self.z_hat
    }

    /// `[X, X]`, the target the stacked product is compared against.
    pub fn target(x: &Matrix) -> Matrix {
        let (m, n) = x.shape();
        let mut t = Matrix::zeros(m, 2 * n);
        t.columns_mut(0, n).copy_from(x);
        t.columns_mut(n, n).copy_from(x);
        t
    }
}

/// `sample_offsets` has `K + 1` entries delimiting each class's columns of `a`.
pub fn build_stacked(
    dict: &StructuredDictionary,
    a: &Matrix,
    sample_offsets: &[usize],
) -> Result<StackedCoding> {
    let c = dict.num_atoms();
    let k = dict.num_classes();
    let n = a.ncols();
    if a.nrows() != c || sample_offsets.len() != k + 1 || sample_offsets[k] != n {
        return Err(Error::invalid(format!(
            "coefficients {:?} do not match {} atoms / {} classes",
            a.shape(),
            c,
            k
        )));
    }
    let dim = dict.dim();
    let mut d_hat = Matrix::zeros(dim, 2 * c);
    d_hat.columns_mut(0, c).copy_from(&dict.atoms);
    d_hat.columns_mut(c, c).copy_from(&dict.atoms);

    let mut z_hat = Matrix::zeros(2 * c, 2 * n);
    z_hat.view_mut((0, 0), (c, n)).copy_from(a);
    for i in 0..k {
        let rows = dict.range(i);
        let (s0, s1) = (sample_offsets[i], sample_offsets[i + 1]);
        let block = a.view((rows.start, s0), (rows.len(), s1 - s0));
        z_hat
            .view_mut((c + rows.start, n + s0), (rows.len(), s1 - s0))
            .copy_from(&block);
    }
    Ok(StackedCoding { d_hat, z_hat })
}

/// `phi(P) = (X~ - P R)(X~ - P R)^T` with `X~ = [X, X]`, `R = D_hat Z_hat`.
pub fn phi(p: &Matrix, x: &Matrix, stacked: &StackedCoding) -> Matrix {
    let resid = StackedCoding::target(x) - p * stacked.product();
    &resid * resid.transpose()
}

/// The symmetric matrix whose trace form the projection update minimizes.
pub fn projection_objective_matrix(
    p: &Matrix,
    x: &Matrix,
    stacked: &StackedCoding,
    l_p_norm: &Matrix,
    delta: f64,
) -> Matrix {
    phi(p, x, stacked) + x * l_p_norm * x.transpose() * delta
}

/// Picks `d` eigenvectors; inside an eigenvalue cluster that straddles the
/// cut, keeps the directions closest to `prev`.
fn select_subspace(m: &Matrix, prev: &Matrix, d: usize, select: EigSelect) -> Result<Matrix> {
    let eig = linalg::sym_eigen(m)?;
    let n = eig.values.len();
    let order: Vec<usize> = match select {
        EigSelect::Smallest => (0..n).collect(),
        EigSelect::Largest => (0..n).rev().collect(),
    };
    let vals: Vec<f64> = order.iter().map(|&i| eig.values[i]).collect();
    let scale = vals.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-10 * scale;
    let cut = vals[d - 1];
    let lo = (0..d)
        .find(|&i| (vals[i] - cut).abs() <= tol)
        .unwrap_or(d - 1);
    let hi = (d..n)
        .take_while(|&i| (vals[i] - cut).abs() <= tol)
        .last()
        .map_or(d, |i| i + 1);

    let mut out = Matrix::zeros(m.nrows(), d);
    for (dst, &src) in order[..lo].iter().enumerate() {
        out.set_column(dst, &eig.vectors.column(src));
    }
    if hi > d {
        // Ambiguous cluster: choose the (d - lo) directions in its span that
        // best align with the previous projection.
        let cluster = Matrix::from_fn(m.nrows(), hi - lo, |r, c| eig.vectors[(r, order[lo + c])]);
        let coords = cluster.transpose() * prev;
        let f = linalg::svd(&coords)?;
        // u has min(hi - lo, d) >= d - lo columns.
        let picked = &cluster * f.u.columns(0, d - lo);
        out.columns_mut(lo, d - lo).copy_from(&picked);
    } else {
        for (dst, &src) in order.iter().enumerate().take(d).skip(lo) {
            out.set_column(dst, &eig.vectors.column(src));
        }
    }
    Ok(out)
}

/// Rotates the basis `u` to be as close as possible to `prev` (orthogonal Procrustes).
fn align_basis(u: &Matrix, prev: &Matrix) -> Result<Matrix> {
    let f = linalg::svd(&(u.transpose() * prev))?;
    Ok(u * (&f.u * &f.vt))
}

/// One damped step toward the `d`-dimensional eigenspace minimizing
/// `tr(P^T (phi(P_prev) + delta X L X^T) P)`, re-orthonormalized.
///
/// The eigenvector basis is first rotated onto the previous projection so the
/// interpolation acts on subspaces rather than on arbitrary bases.
pub fn update_projection(
    prev: &Projection,
    x: &Matrix,
    stacked: &StackedCoding,
    l_p_norm: &Matrix,
    delta: f64,
    gamma: f64,
    select: EigSelect,
) -> Result<Projection> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    if gamma == 0.0 {
        return Ok(prev.clone());
    }
    let d = prev.output_dim();
    let m_mat = projection_objective_matrix(&prev.p, x, stacked, l_p_norm, delta);
    let u = select_subspace(&m_mat, &prev.p, d, select)?;
    let u = align_basis(&u, &prev.p)?;
    let moved = &prev.p + (u - &prev.p) * gamma;
    Ok(Projection {
        p: linalg::orthonormalize(&moved)?,
    })
}

/// Cosines of the principal angles between two column spaces (descending).
pub fn principal_cosines(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    let qa = linalg::orthonormalize(a)?;
    let qb = linalg::orthonormalize(b)?;
    Ok(linalg::svd(&(qa.transpose() * qb))?
        .s
        .iter()
        .copied()
        .collect())
}
