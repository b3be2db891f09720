//! Training orchestration, the full objective, and residual-based classification.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::datasets::LabeledDataset;
use crate::dict_learn::{update_subdictionary, StructuredDictionary};
use crate::error::{Error, Result};
use crate::graphs::{
    build_coefficient_graph, build_projection_graph, laplacians, GraphWeights, LaplacianPair,
    NeighborhoodConfig,
};
use crate::linalg::{self, Matrix, Vector};
use crate::projection::{build_stacked, lpp_init, update_projection, Projection};
use crate::rpca::{rpca_decompose, RpcaConfig, RpcaResult};
use crate::sparse_coding::{code_test_sample, feature_sign_solve, CodingResult, TrainingCoder};

/// Halvings of `gamma` tried before a projection step is rejected.
const PROJECTION_BACKTRACKS: usize = 4;

/// A trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub projection: Projection,
    pub dictionary: StructuredDictionary,
    /// Training coefficients `A` (`C x N`), columns sorted by label.
    pub coefficients: Matrix,
    /// Column `i` is the mean of class `i`'s training coefficient columns (`C x K`).
    pub class_means: Matrix,
    pub config: TrainConfig,
    pub objective_trace: Vec<f64>,
}

impl Model {
    pub fn num_classes(&self) -> usize {
        self.dictionary.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.input_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainWarning {
    pub stage: String,
    /// 1-based class label, when the warning concerns one class.
    pub class: Option<usize>,
    /// 1-based outer iteration; 0 during setup.
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SetupTiming {
    pub rpca_secs: f64,
    pub graphs_secs: f64,
    pub init_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTiming {
    pub coding_secs: f64,
    pub dictionary_secs: f64,
    pub projection_secs: f64,
    pub objective_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub setup_timing: SetupTiming,
    pub per_iteration_timings: Vec<IterationTiming>,
    /// Inner ALM iteration counts, one entry per class per outer iteration.
    pub alm_iterations: Vec<Vec<usize>>,
    pub warnings: Vec<TrainWarning>,
}

/// Borrowed view of the optimization variables.
#[derive(Debug, Clone, Copy)]
pub struct ModelState<'a> {
    pub projection: &'a Matrix,
    pub dictionary: &'a StructuredDictionary,
    pub coefficients: &'a Matrix,
}

/// The unweighted summands of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `sum_i ||P^T X_i - D A_i||^2`
    pub reconstruction: f64,
    /// `sum_i ||P^T X_i - D_i A_i^i||^2`
    pub class_reconstruction: f64,
    /// `sum_i sum_{j != i} ||D_j A_i^j||^2`
    pub cross_class: f64,
    /// `sum_i sum_{j != i} ||D_i^T D_j||^2`
    pub incoherence: f64,
    /// `||A||_1`
    pub sparsity: f64,
    /// `tr(A L^c A^T)`
    pub coefficient_graph: f64,
    /// `sum_i ||D_i||_*`
    pub nuclear: f64,
    /// `tr(P^T X L^p X^T P)`
    pub projection_graph: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        self.reconstruction
            + self.class_reconstruction
            + self.cross_class
            + self.incoherence
            + cfg.lambda1 * self.sparsity
            + cfg.lambda2 * self.coefficient_graph
            + cfg.lambda3 * self.nuclear
            + cfg.delta * self.projection_graph
    }
}

fn check_state(data: &LabeledDataset, state: &ModelState<'_>, laps: &LaplacianPair) -> Result<()> {
    let n = data.len();
    let dict = state.dictionary;
    let ok = state.projection.nrows() == data.dim()
        && state.projection.ncols() == dict.dim()
        && state.coefficients.shape() == (dict.num_atoms(), n)
        && dict.num_classes() == data.num_classes()
        && laps.l_c.shape() == (n, n)
        && laps.l_p_norm.shape() == (n, n);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("objective: inconsistent shapes"))
    }
}

pub fn objective_terms(
    data: &LabeledDataset,
    state: &ModelState<'_>,
    laps: &LaplacianPair,
) -> Result<ObjectiveTerms> {
    check_state(data, state, laps)?;
    let dict = state.dictionary;
    let a = state.coefficients;
    let px = state.projection.transpose() * &data.x;
    let offsets = data.class_offsets();
    let k = dict.num_classes();
    let mut t = ObjectiveTerms {
        reconstruction: (&px - &dict.atoms * a).norm_squared(),
        sparsity: linalg::l1_norm(a),
        coefficient_graph: (a * &laps.l_c * a.transpose()).trace(),
        ..ObjectiveTerms::default()
    };
    let blocks: Vec<Matrix> = (0..k).map(|i| dict.block(i)).collect();
    for i in 0..k {
        let cols = offsets[i]..offsets[i + 1];
        let px_i = px.columns(cols.start, cols.len());
        for j in 0..k {
            let rows = dict.range(j);
            let a_ij = a.view((rows.start, cols.start), (rows.len(), cols.len()));
            let part = &blocks[j] * a_ij;
            if i == j {
                t.class_reconstruction += (px_i - part).norm_squared();
            } else {
                t.cross_class += part.norm_squared();
                t.incoherence += (blocks[i].transpose() * &blocks[j]).norm_squared();
            }
        }
        t.nuclear += linalg::nuclear_norm(&blocks[i])?;
    }
    t.projection_graph = (&px * &laps.l_p_norm * px.transpose()).trace();
    Ok(t)
}

/// The full training objective at `state`.
pub fn objective_value(
    data: &LabeledDataset,
    state: &ModelState<'_>,
    laps: &LaplacianPair,
    cfg: &TrainConfig,
) -> Result<f64> {
    Ok(objective_terms(data, state, laps)?.total(cfg))
}

fn neighborhood(cfg: &TrainConfig) -> NeighborhoodConfig {
    NeighborhoodConfig {
        k1: cfg.k1,
        k2: cfg.k2,
        heat_t: cfg.heat_t,
    }
}

/// Per-class RPCA; returns the stacked low-rank parts and each class's result.
pub fn low_rank_representations(
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Matrix, Vec<RpcaResult>)> {
    let mut lr = Matrix::zeros(data.dim(), data.len());
    let mut results = Vec::with_capacity(data.num_classes());
    for (i, range) in data.class_ranges().into_iter().enumerate() {
        let x_i = data.x.columns(range.start, range.len()).into_owned();
        let mut rcfg = RpcaConfig::for_shape(x_i.nrows(), x_i.ncols());
        if let Some(eta) = cfg.eta {
            rcfg.eta = eta;
        }
        let res = rpca_decompose(&x_i, &rcfg).map_err(|e| Error::Training {
            stage: "rpca",
            class: Some(i + 1),
            iteration: 0,
            source: Box::new(e),
        })?;
        lr.columns_mut(range.start, range.len())
            .copy_from(&res.low_rank);
        results.push(res);
    }
    Ok((lr, results))
}

/// Both neighborhood graphs over the low-rank representations, and their Laplacians.
pub fn build_graphs(
    lr_reps: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(GraphWeights, GraphWeights, LaplacianPair)> {
    let ncfg = neighborhood(cfg);
    let wrap = |e: Error| Error::Training {
        stage: "graphs",
        class: None,
        iteration: 0,
        source: Box::new(e),
    };
    let wc = build_coefficient_graph(lr_reps, labels, &ncfg).map_err(wrap)?;
    let wp = build_projection_graph(lr_reps, labels, &ncfg).map_err(wrap)?;
    let laps = laplacians(&wc, &wp).map_err(wrap)?;
    Ok((wc, wp, laps))
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// Top `atoms` left singular vectors of `y`, padded with random unit columns.
fn initial_block(y: &Matrix, atoms: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let f = linalg::svd(y)?;
    let s1 = f.s.get(0).copied().unwrap_or(0.0);
    let usable =
        f.s.iter()
            .take_while(|&&s| s1 > 0.0 && s >= 1e-10 * s1)
            .count();
    let mut block = Matrix::zeros(y.nrows(), atoms);
    for c in 0..atoms {
        if c < usable {
            block.set_column(c, &f.u.column(c));
        } else {
            block.set_column(c, &random_unit(y.nrows(), rng));
        }
    }
    Ok(block)
}

/// State handed to a training observer after every outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationSnapshot<'a> {
    /// 1-based.
    pub iteration: usize,
    pub state: ModelState<'a>,
    pub coefficient_weights: &'a GraphWeights,
    pub laplacians: &'a LaplacianPair,
    pub objective: f64,
}

pub fn train(data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with_observer(data, cfg, |_| {})
}

/// [`train`], calling `observe` after every outer iteration.
pub fn train_with_observer<F>(
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<(Model, TrainReport)>
where
    F: FnMut(&IterationSnapshot<'_>),
{
    let m = data.dim();
    cfg.validate(m)?;
    let normalized;
    let data = if cfg.normalize_samples {
        normalized = data.with_unit_columns();
        &normalized
    } else {
        data
    };
    let k = data.num_classes();
    let ranges = data.class_ranges();
    if let Some((i, r)) = ranges.iter().enumerate().find(|(_, r)| r.len() < 2) {
        return Err(Error::Validation(format!(
            "class {} has {} training sample(s); at least 2 are required",
            i + 1,
            r.len()
        )));
    }
    let d = cfg.projected_dim(m);
    let n = data.len();
    if d >= n {
        return Err(Error::Validation(format!(
            "projected dimension d={d} must be below the number of training samples N={n}"
        )));
    }
    let offsets = data.class_offsets();
    let mut warnings = Vec::new();
    let mut setup = SetupTiming::default();

    let clock = Instant::now();
    let (lr, rpca) = low_rank_representations(data, cfg)?;
    for (i, r) in rpca.iter().enumerate() {
        if !r.converged {
            warnings.push(TrainWarning {
                stage: "rpca".into(),
                class: Some(i + 1),
                iteration: 0,
                message: format!(
                    "not converged after {} iterations (residual {:e})",
                    r.iterations, r.final_residual
                ),
            });
        }
    }
    setup.rpca_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (wc, wp, laps) = build_graphs(&lr, &data.labels, cfg)?;
    for msg in wc.warnings.iter().chain(wp.warnings.iter()) {
        if !warnings
            .iter()
            .any(|w: &TrainWarning| w.stage == "graphs" && &w.message == msg)
        {
            warnings.push(TrainWarning {
                stage: "graphs".into(),
                class: None,
                iteration: 0,
                message: msg.clone(),
            });
        }
    }
    setup.graphs_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let setup_err = |stage: &'static str, class: Option<usize>| {
        move |e: Error| Error::Training {
            stage,
            class,
            iteration: 0,
            source: Box::new(e),
        }
    };
    let mut projection =
        lpp_init(&data.x, &laps.l_p_norm, d).map_err(setup_err("projection", None))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut atom_offsets = vec![0];
    for r in &ranges {
        let atoms = cfg.atoms_per_class.unwrap_or(r.len());
        atom_offsets.push(atom_offsets.last().unwrap() + atoms);
    }
    let mut atoms = Matrix::zeros(d, *atom_offsets.last().unwrap());
    {
        let px = projection.p.transpose() * &data.x;
        for (i, r) in ranges.iter().enumerate() {
            let y = px.columns(r.start, r.len()).into_owned();
            let cols = atom_offsets[i + 1] - atom_offsets[i];
            let block =
                initial_block(&y, cols, &mut rng).map_err(setup_err("dictionary", Some(i + 1)))?;
            atoms.columns_mut(atom_offsets[i], cols).copy_from(&block);
        }
    }
    let mut dict = StructuredDictionary::new(atoms, atom_offsets)?;
    let mut a = Matrix::zeros(dict.num_atoms(), n);
    setup.init_secs = clock.elapsed().as_secs_f64();

    let mut trace = Vec::new();
    let mut timings = Vec::new();
    let mut alm_iterations = Vec::new();
    let mut converged = false;

    for t in 1..=cfg.outer_max_iter {
        let wrap = |stage: &'static str, class: Option<usize>| {
            move |e: Error| Error::Training {
                stage,
                class,
                iteration: t,
                source: Box::new(e),
            }
        };
        let mut timing = IterationTiming::default();
        let start = Instant::now();

        // Coding sweep, Gauss-Seidel over samples.
        let clock = Instant::now();
        let px = projection.p.transpose() * &data.x;
        let coder =
            TrainingCoder::new(&dict, cfg.lambda1, cfg.lambda2).map_err(wrap("coding", None))?;
        let mut ridged = 0usize;
        for (i, r) in ranges.iter().enumerate() {
            for p in r.clone() {
                let y = px.column(p).into_owned();
                let prob = coder
                    .assemble(&y, i, &a, &laps.l_c, p)
                    .map_err(wrap("coding", Some(i + 1)))?;
                if prob.ridge_applied > 0.0 {
                    ridged += 1;
                }
                let alpha = match feature_sign_solve(&prob) {
                    Ok(CodingResult { alpha, .. }) => alpha,
                    Err(Error::NonConvergence { steps, best, .. }) => {
                        warnings.push(TrainWarning {
                            stage: "coding".into(),
                            class: Some(i + 1),
                            iteration: t,
                            message: format!(
                                "feature-sign search stopped after {steps} steps on sample {p}; best iterate kept"
                            ),
                        });
                        Vector::from_vec(best)
                    }
                    Err(e) => return Err(wrap("coding", Some(i + 1))(e)),
                };
                a.set_column(p, &alpha);
            }
        }
        if ridged > 0 {
            warnings.push(TrainWarning {
                stage: "coding".into(),
                class: None,
                iteration: t,
                message: format!(
                    "{ridged} coding problem(s) needed a ridge to be positive definite"
                ),
            });
        }
        timing.coding_secs = clock.elapsed().as_secs_f64();
        // Sub-dictionary updates.
        let clock = Instant::now();
        let eval = |p: &Matrix, dict: &StructuredDictionary, a: &Matrix| {
            let st = ModelState {
                projection: p,
                dictionary: dict,
                coefficients: a,
            };
            objective_value(data, &st, &laps, cfg)
        };
        let mut current = if cfg.monotone_guard {
            eval(&projection.p, &dict, &a).map_err(wrap("objective", None))?
        } else {
            f64::NAN
        };
        let mut iters = Vec::with_capacity(k);
        let mut collapsed = Vec::new();
        for (i, r) in ranges.iter().enumerate() {
            let px_i = px.columns(r.start, r.len()).into_owned();
            let a_i = a.columns(r.start, r.len()).into_owned();
            let out = update_subdictionary(&px_i, &dict, i, &a_i, cfg)
                .map_err(wrap("dictionary", Some(i + 1)))?;
            if !out.converged {
                let last = out.history.last().copied().unwrap_or([f64::NAN; 3]);
                warnings.push(TrainWarning {
                    stage: "dictionary".into(),
                    class: Some(i + 1),
                    iteration: t,
                    message: format!(
                        "ALM stopped at {} iterations with residuals {:e}, {:e}, {:e}",
                        out.state.iter, last[0], last[1], last[2]
                    ),
                });
            }
            iters.push(out.state.iter);
            let rows = dict.range(i);
            let old_block = dict.block(i);
            let old_coef = a
                .view((rows.start, r.start), (rows.len(), r.len()))
                .into_owned();
            dict.set_block(i, &out.dict_block);
            a.view_mut((rows.start, r.start), (rows.len(), r.len()))
                .copy_from(&out.coef_block);
            if cfg.monotone_guard {
                let j = eval(&projection.p, &dict, &a).map_err(wrap("objective", None))?;
                // A NaN objective counts as a rise.
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                if !(j <= current) {
                    dict.set_block(i, &old_block);
                    a.view_mut((rows.start, r.start), (rows.len(), r.len()))
                        .copy_from(&old_coef);
                    warnings.push(TrainWarning {
                        stage: "dictionary".into(),
                        class: Some(i + 1),
                        iteration: t,
                        message: format!("update rejected: objective {current:e} -> {j:e}"),
                    });
                    continue;
                }
                current = j;
            }
            collapsed.extend(out.zero_columns.iter().map(|&c| (i, rows.start + c)));
        }
        for &(i, col) in &collapsed {
            dict.atoms.set_column(col, &random_unit(d, &mut rng));
            warnings.push(TrainWarning {
                stage: "dictionary".into(),
                class: Some(i + 1),
                iteration: t,
                message: format!("atom {col} collapsed to zero and was re-drawn"),
            });
        }
        if cfg.monotone_guard && !collapsed.is_empty() {
            current = eval(&projection.p, &dict, &a).map_err(wrap("objective", None))?;
        }
        alm_iterations.push(iters);
        timing.dictionary_secs = clock.elapsed().as_secs_f64();

        // Projection update.
        let clock = Instant::now();
        let stacked = build_stacked(&dict, &a, &offsets).map_err(wrap("projection", None))?;
        let mut gamma = cfg.gamma;
        let mut accepted = false;
        for _ in 0..=PROJECTION_BACKTRACKS {
            let next = update_projection(
                &projection,
                &data.x,
                &stacked,
                &laps.l_p_norm,
                cfg.delta,
                gamma,
                cfg.eig_select,
            )
            .map_err(wrap("projection", None))?;
            if !cfg.monotone_guard {
                projection = next;
                accepted = true;
                break;
            }
            let j = eval(&next.p, &dict, &a).map_err(wrap("objective", None))?;
            if j <= current {
                projection = next;
                accepted = true;
                break;
            }
            gamma *= 0.5;
        }
        if !accepted {
            warnings.push(TrainWarning {
                stage: "projection".into(),
                class: None,
                iteration: t,
                message: format!(
                    "step rejected after {PROJECTION_BACKTRACKS} halvings of gamma; projection kept"
                ),
            });
        }
        timing.projection_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let state = ModelState {
            projection: &projection.p,
            dictionary: &dict,
            coefficients: &a,
        };
        let j = objective_value(data, &state, &laps, cfg).map_err(wrap("objective", None))?;
        if !j.is_finite() {
            return Err(wrap("objective", None)(Error::NonFinite("objective value")));
        }
        timing.objective_secs = clock.elapsed().as_secs_f64();
        timing.total_secs = start.elapsed().as_secs_f64();
        timings.push(timing);
        observe(&IterationSnapshot {
            iteration: t,
            state,
            coefficient_weights: &wc,
            laplacians: &laps,
            objective: j,
        });

        let prev = trace.last().copied();
        trace.push(j);
        if let Some(prev) = prev {
            let rel = (j - prev).abs() / f64::max(prev.abs(), f64::MIN_POSITIVE);
            if rel < cfg.outer_tol {
                converged = true;
                break;
            }
        }
    }

    let mut class_means = Matrix::zeros(dict.num_atoms(), k);
    for (i, r) in ranges.iter().enumerate() {
        let mean = a.columns(r.start, r.len()).column_mean();
        class_means.set_column(i, &mean);
    }

    let report = TrainReport {
        objective_trace: trace.clone(),
        converged,
        setup_timing: setup,
        per_iteration_timings: timings,
        alm_iterations,
        warnings,
    };
    let model = Model {
        projection,
        dictionary: dict,
        coefficients: a,
        class_means,
        config: cfg.clone(),
        objective_trace: trace,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// 1-based class label.
    pub label: usize,
    /// Residual `e_i` of every class, in label order.
    pub residuals: Vec<f64>,
    pub coding: Vector,
}

/// Residual-based label with the model's `xi` and `omega`.
pub fn classify(x_test: &Vector, model: &Model) -> Result<Classification> {
    classify_with(x_test, model, model.config.xi, model.config.omega)
}

/// As [`classify`] with explicit test-time weights (for parameter searches).
pub fn classify_with(
    x_test: &Vector,
    model: &Model,
    xi: f64,
    omega: f64,
) -> Result<Classification> {
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(Error::invalid(format!("omega must be >= 0, got {omega}")));
    }
    let dict = &model.dictionary;
    let scaled;
    let x_test = match x_test.norm() {
        n if model.config.normalize_samples && n > 0.0 => {
            scaled = x_test / n;
            &scaled
        }
        _ => x_test,
    };
    let coding = code_test_sample(x_test, &model.projection.p, dict, xi)?.alpha;
    let y = model.projection.p.transpose() * x_test;
    let mut residuals = Vec::with_capacity(dict.num_classes());
    for i in 0..dict.num_classes() {
        let r = dict.range(i);
        let part = dict.atoms.columns(r.start, r.len()) * coding.rows(r.start, r.len());
        let fit = (&y - part).norm_squared();
        let dev = (&coding - model.class_means.column(i)).norm_squared();
        residuals.push(fit + omega * dev);
    }
    let mut label = 0;
    for (i, &e) in residuals.iter().enumerate() {
        if e < residuals[label] {
            label = i;
        }
    }
    Ok(Classification {
        label: label + 1,
        residuals,
        coding,
    })
}

/// Labels for every column of `x`.
pub fn classify_all(x: &Matrix, model: &Model) -> Result<Vec<usize>> {
    x.column_iter()
        .map(|c| classify(&c.into_owned(), model).map(|r| r.label))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::PlantedSubspaces;

    fn planted(k: usize, m: usize, sub: usize, per_class: usize, seed: u64) -> LabeledDataset {
        let spec = PlantedSubspaces {
            classes: k,
            ambient: m,
            sub_dim: sub,
            train_per_class: per_class,
            test_per_class: 0,
            seed,
            ..PlantedSubspaces::default()
        };
        spec.generate().unwrap().0
    }

    /// Weights under which the coding problems stay convex on planted data.
    fn small_cfg() -> TrainConfig {
        TrainConfig {
            d: Some(12),
            beta: 5.0,
            lambda2: 0.01,
            outer_max_iter: 4,
            inner_max_iter: 200,
            ..TrainConfig::default()
        }
    }

    fn naive_terms(
        data: &LabeledDataset,
        st: &ModelState<'_>,
        laps: &LaplacianPair,
    ) -> ObjectiveTerms {
        let dict = st.dictionary;
        let k = dict.num_classes();
        let px = st.projection.transpose() * &data.x;
        let mut t = ObjectiveTerms::default();
        let ranges = data.class_ranges();
        for (i, range) in ranges.iter().enumerate().take(k) {
            let cols: Vec<usize> = range.clone().collect();
            for &p in &cols {
                let y = px.column(p);
                let a = st.coefficients.column(p);
                let mut full = y.into_owned();
                for c in 0..dict.num_atoms() {
                    full -= dict.atoms.column(c) * a[c];
                }
                t.reconstruction += full.norm_squared();
                for j in 0..k {
                    let mut part = Vector::zeros(dict.dim());
                    for c in dict.range(j) {
                        part += dict.atoms.column(c) * a[c];
                    }
                    if i == j {
                        t.class_reconstruction += (y - part).norm_squared();
                    } else {
                        t.cross_class += part.norm_squared();
                    }
                }
            }
            for j in 0..k {
                if i != j {
                    for a_col in dict.range(i) {
                        for b_col in dict.range(j) {
                            t.incoherence += dict
                                .atoms
                                .column(a_col)
                                .dot(&dict.atoms.column(b_col))
                                .powi(2);
                        }
                    }
                }
            }
            t.nuclear += linalg::svd(&dict.block(i)).unwrap().s.sum();
        }
        t.sparsity = st.coefficients.iter().map(|v| v.abs()).sum();
        let n = data.len();
        // Pairwise form of the coefficient-graph term.
        let wc = Matrix::from_fn(n, n, |p, q| if p == q { 0.0 } else { -laps.l_c[(p, q)] });
        for p in 0..n {
            for q in 0..n {
                let diff = st.coefficients.column(p) - st.coefficients.column(q);
                t.coefficient_graph += 0.5 * diff.norm_squared() * wc[(p, q)];
            }
        }
        for p in 0..n {
            for q in 0..n {
                t.projection_graph += laps.l_p_norm[(p, q)] * px.column(p).dot(&px.column(q));
            }
        }
        t
    }

    #[test]
    fn objective_terms_match_naive_evaluation() {
        let data = planted(3, 20, 3, 4, 1);
        let cfg = TrainConfig {
            d: Some(6),
            ..TrainConfig::default()
        };
        let (lr, _) = low_rank_representations(&data, &cfg).unwrap();
        let (_, _, laps) = build_graphs(&lr, &data.labels, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = linalg::orthonormalize(&Matrix::from_fn(20, 6, |_, _| rng.random_range(-1.0..1.0)))
            .unwrap();
        let mut atoms = Matrix::from_fn(6, 9, |_, _| rng.random_range(-1.0..1.0));
        linalg::normalize_columns(&mut atoms);
        let dict = StructuredDictionary::new(atoms, vec![0, 3, 6, 9]).unwrap();
        let a = Matrix::from_fn(9, 12, |_, _| rng.random_range(-1.0..1.0));
        let st = ModelState {
            projection: &p,
            dictionary: &dict,
            coefficients: &a,
        };
        let got = objective_terms(&data, &st, &laps).unwrap();
        let want = naive_terms(&data, &st, &laps);
        let pairs = [
            (got.reconstruction, want.reconstruction),
            (got.class_reconstruction, want.class_reconstruction),
            (got.cross_class, want.cross_class),
            (got.incoherence, want.incoherence),
            (got.sparsity, want.sparsity),
            (got.coefficient_graph, want.coefficient_graph),
            (got.nuclear, want.nuclear),
            (got.projection_graph, want.projection_graph),
        ];
        for (i, (g, w)) in pairs.iter().enumerate() {
            assert!(
                (g - w).abs() <= 1e-8 * w.abs().max(1.0),
                "term {i}: {g} vs {w}"
            );
        }
    }

    #[test]
    fn objective_with_zero_dictionary() {
        let data = planted(2, 10, 2, 3, 5);
        let cfg = TrainConfig {
            d: Some(3),
            delta: 0.7,
            ..TrainConfig::default()
        };
        let (lr, _) = low_rank_representations(&data, &cfg).unwrap();
        let (_, _, laps) = build_graphs(&lr, &data.labels, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = linalg::orthonormalize(&Matrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0)))
            .unwrap();
        let dict = StructuredDictionary::new(Matrix::zeros(3, 4), vec![0, 2, 4]).unwrap();
        let a = Matrix::zeros(4, 6);
        let st = ModelState {
            projection: &p,
            dictionary: &dict,
            coefficients: &a,
        };
        let px = p.transpose() * &data.x;
        let want = 2.0 * px.norm_squared() + 0.7 * (&px * &laps.l_p_norm * px.transpose()).trace();
        let got = objective_value(&data, &st, &laps, &cfg).unwrap();
        assert!((got - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn single_class_duplicate_samples() {
        let col = Vector::from_fn(8, |i, _| (i as f64 + 1.0) * 10.0);
        let x = Matrix::from_columns(&[col.clone(), col]);
        let data = LabeledDataset::new(x, vec![1, 1], None, 255.0).unwrap();
        let cfg = TrainConfig {
            d: Some(1),
            lambda1: 1e-4,
            beta: 5.0,
            ..TrainConfig::default()
        };
        let (model, report) = train(&data, &cfg).unwrap();
        assert!(report.objective_trace.len() <= cfg.outer_max_iter);
        let px = model.projection.p.transpose() * &data.with_unit_columns().x;
        let err = (&px - &model.dictionary.atoms * &model.coefficients).norm();
        assert!(err < 1e-3, "reconstruction error {err}");
        assert_eq!(
            classify(&data.x.column(0).into_owned(), &model)
                .unwrap()
                .label,
            1
        );
    }

    #[test]
    fn train_invariants_and_training_accuracy() {
        let data = planted(5, 30, 5, 10, 11);
        let cfg = small_cfg();
        let mut seen = 0;
        let (model, report) = train_with_observer(&data, &cfg, |snap| {
            seen += 1;
            let p = snap.state.projection;
            let dev =
                linalg::max_abs(&(p.transpose() * p - Matrix::identity(p.ncols(), p.ncols())));
            assert!(dev < 1e-8);
            assert!(snap.state.dictionary.max_norm_deviation() < 1e-10);
            assert!(snap.objective.is_finite());
        })
        .unwrap();
        assert_eq!(seen, report.objective_trace.len());
        assert_eq!(report.per_iteration_timings.len(), seen);
        for (i, r) in data.class_ranges().into_iter().enumerate() {
            let mean = model.coefficients.columns(r.start, r.len()).column_mean();
            assert!((mean - model.class_means.column(i)).amax() < 1e-12);
        }
        let labels = classify_all(&data.x, &model).unwrap();
        assert_eq!(labels, data.labels);
    }

    #[test]
    fn training_is_deterministic() {
        let data = planted(3, 20, 3, 6, 2);
        let cfg = TrainConfig {
            d: Some(8),
            outer_max_iter: 3,
            ..small_cfg()
        };
        let (a, _) = train(&data, &cfg).unwrap();
        let (b, _) = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_errors() {
        let data = planted(2, 10, 2, 3, 0);
        let bad = TrainConfig {
            d: Some(10),
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &bad), Err(Error::Validation(_))));
        let x = Matrix::from_fn(10, 3, |r, c| (r + c) as f64);
        let lonely = LabeledDataset::new(x, vec![1, 1, 2], None, 255.0).unwrap();
        let cfg = TrainConfig {
            d: Some(1),
            ..TrainConfig::default()
        };
        assert!(matches!(train(&lonely, &cfg), Err(Error::Validation(_))));
    }

    fn hand_model(k: usize) -> Model {
        // P = first 6 axes of R^8; each class owns two atoms, all independent.
        let p = Matrix::from_fn(8, 6, |r, c| f64::from(r == c));
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let mut atoms = Matrix::from_fn(6, 2 * k, |_, _| rng.random_range(-1.0..1.0));
        linalg::normalize_columns(&mut atoms);
        let offsets = (0..=k).map(|i| 2 * i).collect();
        Model {
            projection: Projection::new(p).unwrap(),
            dictionary: StructuredDictionary::new(atoms, offsets).unwrap(),
            coefficients: Matrix::zeros(2 * k, 1),
            class_means: Matrix::zeros(2 * k, k),
            config: TrainConfig {
                xi: 1e-9,
                omega: 0.0,
                normalize_samples: false,
                ..TrainConfig::default()
            },
            objective_trace: vec![],
        }
    }

    #[test]
    fn lifted_atom_classified_to_its_class() {
        let model = hand_model(3);
        let x = &model.projection.p * model.dictionary.atoms.column(2);
        let out = classify(&x, &model).unwrap();
        assert_eq!(out.label, 2);
        assert!(out.residuals[1] < 1e-6);
    }

    #[test]
    fn single_class_always_label_one() {
        let model = hand_model(1);
        for s in 0..5 {
            let x = Vector::from_fn(8, |i, _| ((i * 7 + s) as f64).sin());
            assert_eq!(classify(&x, &model).unwrap().label, 1);
        }
    }

    #[test]
    fn exact_mean_wins_for_any_omega() {
        let mut model = hand_model(2);
        model.config.xi = 1e-9;
        let x = &model.projection.p * model.dictionary.atoms.column(0);
        let coding = classify(&x, &model).unwrap().coding;
        model.class_means.set_column(0, &coding);
        for omega in [0.0, 0.1, 10.0] {
            let out = classify_with(&x, &model, 1e-9, omega).unwrap();
            assert_eq!(out.label, 1);
        }
    }

    #[test]
    fn scale_consistency_without_omega() {
        let model = hand_model(3);
        let x = Vector::from_fn(8, |i, _| (i as f64 * 1.3).cos());
        let base = classify_with(&x, &model, 1e-9, 0.0).unwrap();
        let scaled = classify_with(&(&x * 4.0), &model, 16.0 * 1e-9 / 4.0, 0.0).unwrap();
        assert_eq!(base.label, scaled.label);
        for (a, b) in base.residuals.iter().zip(&scaled.residuals) {
            assert!((b - 16.0 * a).abs() <= 1e-8 * b.abs().max(1e-12), "{a} {b}");
        }
    }
}
