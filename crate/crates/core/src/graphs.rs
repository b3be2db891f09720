//! Signed neighborhood graphs over low-rank sample representations, and
//! their Laplacians.
//!
//! Both graphs share one neighborhood rule: samples `i` and `j` are linked
//! when either is among the other's `k1` nearest same-class samples (positive
//! weight) or `k2` nearest other-class samples (negative weight). Distances
//! are Euclidean; ties go to the lower sample index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    /// Weights in {-1, 0, 1}.
    Coefficient,
    /// Heat-kernel weights, negated across classes.
    Projection,
}

#[derive(Debug, Clone)]
pub struct GraphWeights {
    pub w: Matrix,
    pub kind: GraphKind,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodConfig {
    /// Same-class neighbors; `None` means `min(n_i - 1, 15)` per class.
    pub k1: Option<usize>,
    /// Different-class neighbors; `None` means `n_i - 1` per class.
    pub k2: Option<usize>,
    /// Heat-kernel width.
    pub heat_t: f64,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            k1: None,
            k2: None,
            heat_t: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LaplacianPair {
    /// `D^c - W^c` with signed degrees.
    pub l_c: Matrix,
    /// `I - D^{-1/2} W^p D^{-1/2}` with absolute-value degrees.
    pub l_p_norm: Matrix,
    pub degrees_c: Vec<f64>,
    pub degrees_p_abs: Vec<f64>,
}

fn squared_distances(reps: &Matrix) -> Matrix {
    let n = reps.ncols();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (reps.column(i) - reps.column(j)).norm_squared();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Neighbor link mask: `+1` same-class link, `-1` different-class link.
fn neighbor_links(
    dist: &Matrix,
    labels: &[usize],
    cfg: &NeighborhoodConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<Vec<i8>>> {
    let n = labels.len();
    if dist.nrows() != n {
        return Err(Error::invalid(format!(
            "{} representation columns but {} labels",
            dist.nrows(),
            n
        )));
    }
    let mut class_size = std::collections::BTreeMap::new();
    for &l in labels {
        *class_size.entry(l).or_insert(0usize) += 1;
    }

    let mut links = vec![vec![0i8; n]; n];
    let mut warned_k1 = std::collections::BTreeSet::new();
    let mut warned_k2 = std::collections::BTreeSet::new();
    for i in 0..n {
        let li = labels[i];
        let ni = class_size[&li];
        let same_pool = ni - 1;
        let other_pool = n - ni;

        let k1 = match cfg.k1 {
            None => (ni - 1).min(15),
            Some(k) => {
                if k > same_pool && warned_k1.insert(li) {
                    warnings.push(format!(
                        "k1={k} clamped to {same_pool} for class {li} ({ni} samples)"
                    ));
                }
                k.min(same_pool)
            }
        };
        let k2 = match cfg.k2 {
            None => (ni - 1).min(other_pool),
            Some(k) => {
                if k > other_pool && other_pool > 0 && warned_k2.insert(li) {
                    warnings.push(format!(
                        "k2={k} clamped to {other_pool} for class {li} ({other_pool} other-class samples)"
                    ));
                }
                k.min(other_pool)
            }
        };

        let mut same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == li).collect();
        let mut other: Vec<usize> = (0..n).filter(|&j| labels[j] != li).collect();
        let by_distance =
            |a: &usize, b: &usize| dist[(i, *a)].total_cmp(&dist[(i, *b)]).then(a.cmp(b));
        same.sort_by(by_distance);
        other.sort_by(by_distance);
        for &j in &same[..k1] {
            links[i][j] = 1;
            links[j][i] = 1;
        }
        for &j in &other[..k2] {
            links[i][j] = -1;
            links[j][i] = -1;
        }
    }
    Ok(links)
}

pub fn build_coefficient_graph(
    lr_reps: &Matrix,
    labels: &[usize],
    cfg: &NeighborhoodConfig,
) -> Result<GraphWeights> {
    let dist = squared_distances(lr_reps);
    let mut warnings = Vec::new();
    let links = neighbor_links(&dist, labels, cfg, &mut warnings)?;
    let n = labels.len();
    let w = Matrix::from_fn(n, n, |i, j| f64::from(links[i][j]));
    Ok(GraphWeights {
        w,
        kind: GraphKind::Coefficient,
        warnings,
    })
}

pub fn build_projection_graph(
    lr_reps: &Matrix,
    labels: &[usize],
    cfg: &NeighborhoodConfig,
) -> Result<GraphWeights> {
    if !(cfg.heat_t > 0.0 && cfg.heat_t.is_finite()) {
        return Err(Error::invalid(format!(
            "heat_t must be positive, got {}",
            cfg.heat_t
        )));
    }
    let dist = squared_distances(lr_reps);
    let mut warnings = Vec::new();
    let links = neighbor_links(&dist, labels, cfg, &mut warnings)?;
    let n = labels.len();
    let denom = 2.0 * cfg.heat_t * cfg.heat_t;
    let w = Matrix::from_fn(n, n, |i, j| match links[i][j] {
        0 => 0.0,
        s => f64::from(s) * (-dist[(i, j)] / denom).exp(),
    });
    Ok(GraphWeights {
        w,
        kind: GraphKind::Projection,
        warnings,
    })
}

pub fn laplacians(wc: &GraphWeights, wp: &GraphWeights) -> Result<LaplacianPair> {
    let n = wc.w.nrows();
    if !wc.w.is_square() || wp.w.shape() != (n, n) {
        return Err(Error::invalid(format!(
            "graph shapes differ: {:?} vs {:?}",
            wc.w.shape(),
            wp.w.shape()
        )));
    }
    let degrees_c: Vec<f64> = wc.w.column_iter().map(|c| c.sum()).collect();
    let mut l_c = -&wc.w;
    for (i, d) in degrees_c.iter().enumerate() {
        l_c[(i, i)] += d;
    }

    let degrees_p_abs: Vec<f64> =
        wp.w.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum())
            .collect();
    let inv_sqrt: Vec<f64> = degrees_p_abs
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l_p_norm = Matrix::from_fn(n, n, |i, j| -inv_sqrt[i] * wp.w[(i, j)] * inv_sqrt[j]);
    for i in 0..n {
        l_p_norm[(i, i)] += 1.0;
    }
    Ok(LaplacianPair {
        l_c,
        l_p_norm,
        degrees_c,
        degrees_p_abs,
    })
}

/// `sum_ij 1/2 ||a_i - a_j||^2 W_ij` over the columns of `a`, evaluated pairwise.
pub fn pairwise_graph_energy(a: &Matrix, w: &Matrix) -> f64 {
    let n = a.ncols();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if w[(i, j)] != 0.0 {
                total += 0.5 * (a.column(i) - a.column(j)).norm_squared() * w[(i, j)];
            }
        }
    }
    total
}
