use gla_core::checkpoint::{decode_checkpoint, encode_checkpoint};
use gla_core::data::{build_node_features, generate_synthetic, FeaturePolicy, SyntheticConfig};
use gla_core::experiment::fold_plans;
use gla_core::model::{represent_values, HeadVars, PreparedGraph};
use gla_core::train::{accuracy, train_fold, PreparedDataset};
use gla_core::{run_experiment, ExperimentConfig, GraphDataset, ModelConfig, Tape, TrainConfig};

fn synthetic(num_graphs: usize, densities: Vec<f64>, seed: u64) -> GraphDataset {
    let raw = generate_synthetic(&SyntheticConfig {
        num_graphs,
        edge_density_per_class: densities,
        size_range: (8, 12),
        node_label_cap: 10,
        seed,
    })
    .unwrap();
    build_node_features(&raw, FeaturePolicy::OneHotNodeLabels).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        model: ModelConfig {
            layers: 3,
            hidden: 32,
            proj_dim: 32,
        },
        surrogate_epochs: 60,
        ..TrainConfig::default()
    }
}

fn experiment(train: TrainConfig) -> ExperimentConfig {
    ExperimentConfig {
        train,
        ..ExperimentConfig::default()
    }
}

#[test]
fn separable_synthetic_is_learned_in_thirty_epochs() {
    let ds = synthetic(60, vec![0.1, 0.9], 3);
    let cfg = experiment(TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    });
    let run = run_experiment(&ds, &cfg).unwrap();
    assert!(run.report.summary.mean_accuracy >= 0.95, "{}", run.report.summary_line());
}

#[test]
fn training_reduces_the_loss() {
    let ds = synthetic(80, vec![0.2, 0.35], 5);
    let cfg = experiment(quick(30));
    let data = PreparedDataset::new(&ds);
    let plan = &fold_plans(ds.len(), &cfg).unwrap()[0];
    let fold = train_fold(&data, plan, &cfg.train).unwrap().result;
    let mean = |e: &[gla_core::train::EpochStats]| e.iter().map(|s| s.total_loss).sum::<f64>() / e.len() as f64;
    assert!(mean(&fold.epochs[20..]) < mean(&fold.epochs[..10]));
}

#[test]
fn identity_augmentation_limit() {
    let ds = synthetic(40, vec![0.2, 0.6], 9);
    let mut train = quick(4);
    train.augmentation.eta = 0.0;
    let cfg = experiment(train);
    let run = run_experiment(&ds, &cfg).unwrap();
    for f in &run.report.folds {
        assert_eq!(f.label_invariant.rate, 1.0);
        for e in &f.epochs {
            assert!((e.contrastive_loss + 1.0).abs() <= 1e-12, "{}", e.contrastive_loss);
        }
    }

    // Per-pair cosine on trained parameters with a zero offset.
    let params = &run.params[0];
    let graphs: Vec<PreparedGraph> = ds.graphs.iter().map(PreparedGraph::new).collect();
    let reps = represent_values(params, &graphs.iter().collect::<Vec<_>>()).unwrap();
    let mut tape = Tape::new();
    let head = HeadVars::register(&params.projector, &mut tape, false);
    let h = tape.constant(reps.clone());
    let p = head.logits(&mut tape, h).unwrap();
    let p = tape.value(p).clone();
    for r in 0..p.rows() {
        let v = p.row(r);
        let nn: f64 = v.iter().map(|x| x * x).sum();
        let loss = -nn / (nn.sqrt() * nn.sqrt());
        assert!((loss + 1.0).abs() <= 1e-12);
    }
}

#[test]
fn fold_training_is_deterministic() {
    let ds = synthetic(40, vec![0.2, 0.5], 11);
    let cfg = experiment(quick(3));
    let data = PreparedDataset::new(&ds);
    let plan = &fold_plans(ds.len(), &cfg).unwrap()[2];
    let a = train_fold(&data, plan, &cfg.train).unwrap();
    let b = train_fold(&data, plan, &cfg.train).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(encode_checkpoint(&a.params), encode_checkpoint(&b.params));
}

#[test]
fn parallel_folds_match_sequential_folds() {
    let ds = synthetic(40, vec![0.2, 0.5], 13);
    let serial = experiment(quick(2));
    let parallel = ExperimentConfig {
        parallel_folds: 4,
        ..serial.clone()
    };
    let a = run_experiment(&ds, &serial).unwrap().report;
    let b = run_experiment(&ds, &parallel).unwrap().report;
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn unlabeled_fold_without_classification_weight_runs() {
    let ds = synthetic(40, vec![0.2, 0.5], 17);
    let mut train = quick(3);
    train.alpha = 0.0;
    let cfg = experiment(train);
    let data = PreparedDataset::new(&ds);
    let mut plan = fold_plans(ds.len(), &cfg).unwrap()[0].clone();
    plan.labeled.clear();
    let fold = train_fold(&data, &plan, &cfg.train).unwrap().result;
    assert_eq!(fold.labeled_count, 0);
    assert!(fold.epochs.iter().all(|e| e.classification_loss == 0.0));
}

#[test]
fn checkpoint_preserves_predictions() {
    let ds = synthetic(40, vec![0.2, 0.5], 19);
    let cfg = experiment(quick(2));
    let data = PreparedDataset::new(&ds);
    let plan = &fold_plans(ds.len(), &cfg).unwrap()[1];
    let t = train_fold(&data, plan, &cfg.train).unwrap();
    let back = decode_checkpoint(&encode_checkpoint(&t.params)).unwrap();
    assert_eq!(back, t.params);
    assert_eq!(
        accuracy(&back, &data, &plan.test_indices).unwrap(),
        t.result.test_accuracy
    );
}

#[test]
fn augmentation_checks_are_exercised() {
    let ds = synthetic(40, vec![0.2, 0.5], 23);
    let run = run_experiment(&ds, &experiment(quick(3))).unwrap();
    let a = &run.report.augmentation;
    assert!(a.invariance_checked > 0 && a.ordering_checked > 0);
    assert_eq!(a.invariance_violations + a.ordering_violations, 0);
    assert_eq!(a.qualified_histogram.iter().sum::<u64>(), a.augmentations);
}
