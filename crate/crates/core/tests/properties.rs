use gla_core::augment::{perturb, sample_unit_vector, select_index, Strategy as Pick};
use gla_core::data::{assign_labels, make_folds, parse_tudataset_raw, write_tudataset, RawDataset, RawGraph};
use gla_core::model::{classify_values, normalize_adjacency, represent_values, ModelConfig, ModelParams, PreparedGraph};
use gla_core::rng;
use gla_core::{GraphInstance, Matrix};
use proptest::prelude::*;

fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max_nodes).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let m = pairs.len();
        (Just(n), proptest::collection::vec(any::<bool>(), m)).prop_map(move |(n, keep)| {
            let edges = pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| *e).collect();
            (n, edges)
        })
    })
}

fn instance(n: usize, edges: Vec<(usize, usize)>, features: Matrix) -> GraphInstance {
    GraphInstance {
        node_count: n,
        edges,
        node_features: features,
        label: Some(0),
    }
}

fn dense_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(u, v) in edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i].sqrt() * deg[j].sqrt())).collect())
        .collect()
}

fn small_params(feature_dim: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        layers: 3,
        hidden: 6,
        proj_dim: 5,
    };
    ModelParams::init(feature_dim, 3, &cfg, &mut rng::stream(seed, "prop-init", &[])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn normalization_matches_dense_oracle((n, edges) in graph_strategy(8)) {
        let g = instance(n, edges.clone(), Matrix::zeros(n, 1));
        let oracle = dense_oracle(n, &edges);
        let got = normalize_adjacency(&g).sparse().to_dense();
        for (i, row) in oracle.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                prop_assert!((got.get(i, j) - want).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #[test]
    fn pooling_is_permutation_invariant(
        (n, edges) in graph_strategy(7),
        seed in any::<u64>(),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut r = rng::stream(seed, "prop-features", &[]);
        let feats = Matrix::new(n, 4, (0..n * 4).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::stream(perm_seed, "prop-perm", &[]));
        // perm[old] = new
        let mut permuted = Matrix::zeros(n, 4);
        for (old, &new) in perm.iter().enumerate() {
            permuted.row_mut(new).copy_from_slice(feats.row(old));
        }
        let pedges: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(u, v)| (perm[u].min(perm[v]), perm[u].max(perm[v])))
            .collect();
        let params = small_params(4, seed);
        let a = PreparedGraph::new(&instance(n, edges, feats));
        let b = PreparedGraph::new(&instance(n, pedges, permuted));
        let ha = represent_values(&params, &[&a]).unwrap();
        let hb = represent_values(&params, &[&b]).unwrap();
        for (x, y) in ha.as_slice().iter().zip(hb.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn classifier_output_is_on_the_simplex(seed in any::<u64>(), scale in 0.1f64..50.0) {
        use rand::Rng;
        let params = small_params(4, seed);
        let mut r = rng::stream(seed, "prop-h", &[]);
        let h = Matrix::new(5, 6, (0..30).map(|_| scale * r.gen_range(-1.0..1.0)).collect()).unwrap();
        let p = classify_values(&params.classifier, &h).unwrap();
        for row in 0..p.rows() {
            let s: f64 = p.row(row).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.row(row).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn folds_partition_the_dataset(n in 3usize..160, k in 3usize..=10, seed in any::<u64>(), ratio in 0.01f64..=1.0) {
        prop_assume!(n >= k);
        let folds = make_folds(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all_tests: Vec<usize> = folds.iter().flat_map(|f| f.test_indices.clone()).collect();
        all_tests.sort_unstable();
        prop_assert_eq!(all_tests, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(|f| f.test_indices.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (i, f) in folds.iter().enumerate() {
            prop_assert_eq!(&f.valid_indices, &folds[(i + 1) % k].test_indices);
            let mut union: Vec<usize> = f
                .train_indices
                .iter()
                .chain(&f.valid_indices)
                .chain(&f.test_indices)
                .copied()
                .collect();
            union.sort_unstable();
            prop_assert_eq!(union, (0..n).collect::<Vec<_>>());
            let labeled = assign_labels(f, ratio, seed).unwrap();
            let expected = (ratio * f.train_indices.len() as f64).round() as usize;
            prop_assert_eq!(labeled.labeled.len(), expected);
            prop_assert!(labeled.labeled.iter().all(|i| f.train_indices.binary_search(i).is_ok()));
        }
    }

    #[test]
    fn write_then_parse_is_exact(
        graphs in proptest::collection::vec((graph_strategy(6), 0usize..3), 1..12),
        with_node_labels in any::<bool>(),
    ) {
        let mut raw_graphs: Vec<RawGraph> = graphs
            .into_iter()
            .map(|((n, edges), label)| RawGraph {
                node_count: n,
                node_labels: with_node_labels.then(|| (0..n as i64).map(|i| i % 3).collect()),
                edges,
                label: Some(label),
            })
            .collect();
        // Class indices must be dense for the parser to recover them.
        let mut used: Vec<usize> = raw_graphs.iter().map(|g| g.label.unwrap()).collect();
        used.sort_unstable();
        used.dedup();
        for g in &mut raw_graphs {
            g.label = Some(used.binary_search(&g.label.unwrap()).unwrap());
        }
        let raw = RawDataset {
            name: "RT".into(),
            graphs: raw_graphs,
            num_classes: used.len(),
            class_raw_labels: used.iter().map(|&c| c as i64 * 2 - 1).collect(),
        };
        let tmp = tempfile::tempdir().unwrap();
        write_tudataset(&raw, tmp.path()).unwrap();
        let (back, stats) = parse_tudataset_raw(tmp.path(), "RT").unwrap();
        prop_assert_eq!(stats.duplicate_edges + stats.self_loops, 0);
        prop_assert_eq!(back, raw);
    }

    #[test]
    fn perturbation_has_length_eta_d(seed in any::<u64>(), dim in 1usize..40, eta in 0.0f64..5.0, d in 0.0f64..100.0) {
        use rand::Rng;
        let mut r = rng::stream(seed, "prop-perturb", &[]);
        let h: Vec<f64> = (0..dim).map(|_| r.gen_range(-10.0..10.0)).collect();
        let delta = sample_unit_vector(dim, &mut r);
        let a = perturb(&h, d, eta, &delta);
        let len = a.iter().zip(&h).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        prop_assert!((len - eta * d).abs() <= 1e-9 * (1.0 + eta * d));
    }

    #[test]
    fn strategies_are_ordered(probs in proptest::collection::vec(0.0f64..=1.0, 1..20), seed in any::<u64>()) {
        let mut r = rng::stream(seed, "prop-select", &[]);
        let h = probs[select_index(&probs, Pick::Hardest, &mut r)];
        let m = probs[select_index(&probs, Pick::Random, &mut r)];
        let e = probs[select_index(&probs, Pick::Easiest, &mut r)];
        prop_assert!(h <= m && m <= e);
        prop_assert_eq!(h, probs.iter().copied().fold(f64::INFINITY, f64::min));
        prop_assert_eq!(e, probs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
}

#[test]
fn unit_directions_average_to_zero() {
    let dim = 8;
    let n = 20_000;
    let mut r = rng::stream(7, "mc-unit", &[]);
    let mut mean = vec![0.0; dim];
    for _ in 0..n {
        for (m, x) in mean.iter_mut().zip(sample_unit_vector(dim, &mut r)) {
            *m += x / n as f64;
        }
    }
    // Each coordinate has variance 1/(dim·n); the norm of the mean is ~ n^-1/2.
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm < 4.0 / (n as f64).sqrt(), "mean direction norm {norm}");
}
