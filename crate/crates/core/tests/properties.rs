//! Randomized invariants of the numeric kernels, the data plumbing and the
//! test-time classifier.

use jplrdl_core::datasets::{model_from_bytes, model_to_bytes};
use jplrdl_core::graphs::{build_coefficient_graph, laplacians, pairwise_graph_energy};
use jplrdl_core::linalg::{l21_prox, nuclear_norm, orthonormalize, soft_threshold, svd, svt};
use jplrdl_core::pipeline::classify_with;
use jplrdl_core::rpca::rpca_decompose;
use jplrdl_core::sparse_coding::{feature_sign_solve, QuadraticL1Problem};
use jplrdl_core::*;
use proptest::prelude::*;

fn matrix(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |v| Matrix::from_vec(r, c, v))
    })
}

/// Two matrices of one shape.
fn matrix_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..10, 1usize..10).prop_flat_map(|(r, c)| {
        let m = move || {
            prop::collection::vec(-10.0..10.0f64, r * c)
                .prop_map(move |v| Matrix::from_vec(r, c, v))
        };
        (m(), m())
    })
}

fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    let s = svd(m).unwrap().s;
    let top = s.iter().copied().fold(0.0, f64::max);
    s.iter().filter(|&&v| v > tol * top.max(1e-300)).count()
}

fn labels_for(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i + 1, n))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proximal_maps_are_non_expansive((x, y) in matrix_pair(), tau in 0.0..5.0f64) {
        let dist = (&x - &y).norm();
        for prox in [soft_threshold, svt, l21_prox] {
            let d = (prox(&x, tau).unwrap() - prox(&y, tau).unwrap()).norm();
            prop_assert!(d <= dist * (1.0 + 1e-10) + 1e-10, "{d} > {dist}");
        }
    }

    #[test]
    fn shrinkage_never_grows(x in matrix(1..12, 1..12), tau in 0.0..5.0f64) {
        let before = nuclear_norm(&x).unwrap();
        prop_assert!(nuclear_norm(&svt(&x, tau).unwrap()).unwrap() <= before * (1.0 + 1e-12) + 1e-12);
        let out = l21_prox(&x, tau).unwrap();
        for (a, b) in out.column_iter().zip(x.column_iter()) {
            prop_assert!(a.norm() <= b.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn svd_reconstructs_low_rank_products((a, b) in (1usize..4).prop_flat_map(|k| (matrix(2..25, k..k + 1), matrix(k..k + 1, 2..25)))) {
        let x = &a * &b;
        let f = svd(&x).unwrap();
        prop_assert!((f.reconstruct() - &x).norm() <= 1e-10 * x.norm().max(1e-300));
        let k = f.s.len();
        prop_assert!(linalg::max_abs(&(f.u.transpose() * &f.u - Matrix::identity(k, k))) < 1e-10);
    }

    #[test]
    fn orthonormalize_is_idempotent(x in matrix(6..12, 1..6)) {
        // Random continuous entries give full column rank almost surely.
        prop_assume!(numerical_rank(&x, 1e-6) == x.ncols());
        let once = orthonormalize(&x).unwrap();
        let twice = orthonormalize(&once).unwrap();
        prop_assert!(linalg::max_abs(&(once - twice)) < 1e-12);
    }

    #[test]
    fn feature_sign_beats_simple_candidates(
        g in matrix(1..7, 1..7),
        lin in prop::collection::vec(-5.0..5.0f64, 6),
        lambda1 in 0.01..2.0f64,
    ) {
        let n = g.nrows();
        let h = &g * g.transpose() + Matrix::identity(n, n) * 0.1;
        let linear = Vector::from_iterator(n, lin.into_iter().take(n));
        let prob = QuadraticL1Problem::new(h, linear, lambda1).unwrap();
        let res = feature_sign_solve(&prob).unwrap();
        let obj = prob.objective(&res.alpha);
        prop_assert!(obj <= prob.objective(&Vector::zeros(n)) + 1e-12);
        prop_assert!(prob.optimality_violation(&res.alpha) < 1e-8);
        prop_assert_eq!(feature_sign_solve(&prob).unwrap().alpha, res.alpha);
    }

    #[test]
    fn rpca_beats_the_trivial_splits(seed in 0u64..1000, rank in 1usize..4, n in 8usize..30) {
        // rank(L) <= rank(X) is not guaranteed: the sparse part may absorb entries
        // of a coherent low-rank matrix. Both trivial splits are feasible, though.
        // A fast-growing penalty freezes the iterates short of the optimum: the
        // default rho = 1.5 gets within a percent, rho = 1.1 within 0.1%.
        let spec = PlantedSubspaces { classes: 1, ambient: 20, sub_dim: rank, train_per_class: n, test_per_class: 0, seed, ..PlantedSubspaces::default() };
        let x = spec.generate().unwrap().0.x;
        let default = RpcaConfig::for_shape(20, n);
        let tight = RpcaConfig { rho: 1.1, tol: 1e-9, max_iter: 5000, ..default };
        for (cfg, slack) in [(default, 1.0 + 1e-2), (tight, 1.0 + 1e-3)] {
            let res = rpca_decompose(&x, &cfg).unwrap();
            let value = nuclear_norm(&res.low_rank).unwrap() + cfg.eta * linalg::l1_norm(&res.sparse);
            prop_assert!(value <= nuclear_norm(&x).unwrap() * slack, "rho {}: {value}", cfg.rho);
            prop_assert!(value <= cfg.eta * linalg::l1_norm(&x) * slack, "rho {}: {value}", cfg.rho);
            prop_assert!((&x - &res.low_rank - &res.sparse).norm() <= 1e-6 * x.norm());
        }
    }

    #[test]
    fn coefficient_graph_energy_matches_trace(
        seed in 0u64..1000,
        counts in prop::collection::vec(2usize..5, 1..4),
        k1 in 1usize..4,
        k2 in 1usize..4,
    ) {
        let labels = labels_for(&counts);
        let n = labels.len();
        let reps = PlantedSubspaces { classes: 1, ambient: 6, sub_dim: 6, train_per_class: n, test_per_class: 0, seed, ..PlantedSubspaces::default() }
            .generate().unwrap().0.x;
        let ncfg = NeighborhoodConfig { k1: Some(k1), k2: Some(k2), heat_t: 1.0 };
        let wc = build_coefficient_graph(&reps, &labels, &ncfg).unwrap();
        prop_assert!(wc.w.iter().all(|&v| v == 0.0 || v == 1.0 || v == -1.0));
        prop_assert_eq!(&wc.w, &wc.w.transpose());
        let laps = laplacians(&wc, &wc).unwrap();
        let a = Matrix::from_fn(3, n, |r, c| ((r * 31 + c * 17 + seed as usize) % 13) as f64 - 6.0);
        let energy = pairwise_graph_energy(&a, &wc.w);
        let trace = (&a * &laps.l_c * a.transpose()).trace();
        prop_assert!((energy - trace).abs() <= 1e-9 * energy.abs().max(1.0));
    }

    #[test]
    fn corruption_keeps_shape_and_counts(
        x in matrix(4..40, 1..6),
        fraction in 0.0..=1.0f64,
        seed in any::<u64>(),
        uniform in any::<bool>(),
    ) {
        let x = x.map(|v| v.abs() * 10.0);
        let n = x.ncols();
        let ds = LabeledDataset::new(x, vec![1; n], None, 255.0).unwrap();
        let kind = if uniform { CorruptionKind::Uniform } else { CorruptionKind::Pixel };
        let out = apply_corruption(&ds, &CorruptionSpec { kind, fraction, seed }).unwrap();
        prop_assert_eq!(out.x.shape(), ds.x.shape());
        prop_assert_eq!(&out.labels, &ds.labels);
        let want = (fraction * ds.dim() as f64).round() as usize;
        for (a, b) in out.x.column_iter().zip(ds.x.column_iter()) {
            // Inputs stay below 100, so every replaced pixel differs (uniform draws almost surely).
            let changed = a.iter().zip(b.iter()).filter(|(p, q)| p != q).count();
            if kind == CorruptionKind::Pixel {
                prop_assert_eq!(changed, want);
                prop_assert_eq!(a.iter().filter(|&&v| v == 255.0).count(), want);
            } else {
                prop_assert!(changed <= want);
            }
        }
        prop_assert_eq!(apply_corruption(&ds, &CorruptionSpec { kind, fraction, seed }).unwrap(), out);
    }

    #[test]
    fn split_partitions_every_class(
        counts in prop::collection::vec(2usize..8, 1..5),
        seed in any::<u64>(),
        take in 1usize..7,
    ) {
        let labels = labels_for(&counts);
        let n = labels.len();
        let ds = LabeledDataset::new(Matrix::from_fn(2, n, |r, c| (r + 2 * c) as f64), labels, None, 255.0).unwrap();
        let smallest = *counts.iter().min().unwrap();
        let result = split(&ds, take, seed);
        if take >= smallest {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let (train, test) = result.unwrap();
        let mut all: Vec<usize> = train.original_index.iter().chain(&test.original_index).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (label, &count) in counts.iter().enumerate() {
            prop_assert_eq!(train.labels.iter().filter(|&&l| l == label + 1).count(), take);
            prop_assert_eq!(test.labels.iter().filter(|&&l| l == label + 1).count(), count - take);
        }
    }
}

/// One small trained model shared by the classifier properties.
fn trained_model() -> &'static (Model, LabeledDataset) {
    static MODEL: std::sync::OnceLock<(Model, LabeledDataset)> = std::sync::OnceLock::new();
    MODEL.get_or_init(|| {
        let spec = PlantedSubspaces {
            classes: 3,
            ambient: 15,
            sub_dim: 3,
            train_per_class: 6,
            test_per_class: 5,
            ..PlantedSubspaces::default()
        };
        let (train_set, test_set) = spec.generate().unwrap();
        let cfg = TrainConfig {
            d: Some(8),
            beta: 5.0,
            lambda2: 0.01,
            outer_max_iter: 3,
            ..TrainConfig::default()
        };
        (train(&train_set, &cfg).unwrap().0, test_set)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn model_bytes_round_trip_preserve_classification(col in 0usize..15) {
        let (model, test) = trained_model();
        let back = model_from_bytes(&model_to_bytes(model)).unwrap();
        prop_assert_eq!(&back, model);
        let x = test.x.column(col).into_owned();
        prop_assert_eq!(classify(&x, &back).unwrap(), classify(&x, model).unwrap());
    }

    #[test]
    fn truncated_model_bytes_are_rejected(cut in 0.0..1.0f64) {
        let bytes = model_to_bytes(&trained_model().0);
        let len = (cut * bytes.len() as f64) as usize;
        prop_assert!(model_from_bytes(&bytes[..len]).is_err());
    }

    #[test]
    fn label_is_scale_invariant_without_mean_term(col in 0usize..15, scale in 0.1..10.0f64) {
        let (model, test) = trained_model();
        let x = test.x.column(col).into_owned();
        let a = classify_with(&x, model, model.config.xi, 0.0).unwrap();
        let b = classify_with(&(&x * scale), model, model.config.xi, 0.0).unwrap();
        prop_assert_eq!(a.label, b.label);
    }
}
