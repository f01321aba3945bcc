//! Finite-difference suite over every tape operation, the model components
//! and the full training objective.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, centroid_distance, target_class, AugmentationConfig};
use crate::autodiff::{Tape, Var};
use crate::data::GraphInstance;
use crate::error::{GlaError, Result};
use crate::gradcheck::grad_check_many;
use crate::loss::{classification_loss, contrastive_loss, ntxent_with_negatives, one_hot_targets};
use crate::matrix::{Matrix, SparseMatrix};
use crate::model::{classify, encode, pool, project, represent, represent_values, ModelConfig, ModelParams, ParamVars, PreparedGraph};
use crate::rng::{self, StreamRng};
use crate::train::{objective, TrainConfig};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteSize {
    /// Small shapes; runs in well under a second in release builds.
    Small,
    /// Wider hidden layers and both loss variants.
    Full,
}

impl fmt::Display for SuiteSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteSize::Small => "small",
            SuiteSize::Full => "full",
        })
    }
}

impl FromStr for SuiteSize {
    type Err = GlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(SuiteSize::Small),
            "full" => Ok(SuiteSize::Full),
            _ => Err(GlaError::Config(format!("unknown suite size `{s}` (small|full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn gaussian(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(rows, cols, data).expect("consistent shape")
}

/// Entries bounded away from zero so that kinks and poles stay outside the
/// finite-difference stencil.
fn away_from_zero(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix {
    let mut m = gaussian(rows, cols, rng);
    for x in m.as_mut_slice() {
        *x = x.signum() * (0.2 + x.abs());
    }
    m
}

fn positive(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix {
    let mut m = gaussian(rows, cols, rng);
    for x in m.as_mut_slice() {
        *x = 0.5 + x.abs();
    }
    m
}

/// Reduces `out` to a scalar with fixed random weights so every output entry
/// carries a distinct gradient.
fn weighted(t: &mut Tape, out: Var, w: &Matrix) -> Result<Var> {
    let c = t.constant(w.clone());
    t.dot(out, c)
}

/// 5-node toy graph: a 4-cycle with a pendant node.
pub fn toy_graph(feature_dim: usize, rng: &mut StreamRng) -> GraphInstance {
    GraphInstance {
        node_count: 5,
        edges: vec![(0, 1), (0, 3), (1, 2), (2, 3), (3, 4)],
        node_features: gaussian(5, feature_dim, rng),
        label: Some(1),
    }
}

/// 3-node path used as the second graph of the batch checks.
fn path_graph(feature_dim: usize, rng: &mut StreamRng) -> GraphInstance {
    GraphInstance {
        node_count: 3,
        edges: vec![(0, 1), (1, 2)],
        node_features: gaussian(3, feature_dim, rng),
        label: Some(0),
    }
}

struct Runner {
    outcomes: Vec<CheckOutcome>,
}

impl Runner {
    fn check<F>(&mut self, name: &str, inputs: &[Matrix], f: F) -> Result<()>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let errs = grad_check_many(f, inputs, STEP)?;
        let worst = errs.into_iter().fold(0.0, f64::max);
        self.outcomes.push(CheckOutcome {
            name: name.to_string(),
            max_relative_error: worst,
            passed: worst < TOLERANCE,
        });
        Ok(())
    }
}

pub fn run_suite(size: SuiteSize) -> Result<Vec<CheckOutcome>> {
    let mut rng = rng::stream(0, "gradsuite", &[]);
    let (n, m, p) = match size {
        SuiteSize::Small => (3, 4, 2),
        SuiteSize::Full => (6, 8, 5),
    };
    let mut run = Runner { outcomes: Vec::new() };

    let a = gaussian(n, m, &mut rng);
    let b = gaussian(m, p, &mut rng);
    let a2 = gaussian(n, m, &mut rng);
    let w_np = gaussian(n, p, &mut rng);
    let w_nm = gaussian(n, m, &mut rng);
    let w_1m = gaussian(1, m, &mut rng);
    let w_n1 = gaussian(n, 1, &mut rng);
    let w_mn = gaussian(m, n, &mut rng);

    run.check("matmul", &[a.clone(), b.clone()], |t, v| {
        let o = t.matmul(v[0], v[1])?;
        weighted(t, o, &w_np)
    })?;
    let sparse = Arc::new(SparseMatrix::from_triplets(
        n,
        &(0..n).flat_map(|i| [(i, i, 0.5), (i, (i + 1) % n, 0.25)]).collect::<Vec<_>>(),
    )?);
    run.check("spmm", std::slice::from_ref(&a), |t, v| {
        let o = t.spmm(Arc::clone(&sparse), v[0])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("add", &[a.clone(), a2.clone()], |t, v| {
        let o = t.add(v[0], v[1])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("add_row", &[a.clone(), gaussian(1, m, &mut rng)], |t, v| {
        let o = t.add_row(v[0], v[1])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("mul", &[a.clone(), a2.clone()], |t, v| {
        let o = t.mul(v[0], v[1])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("row_scale", &[a.clone(), gaussian(n, 1, &mut rng)], |t, v| {
        let o = t.row_scale(v[0], v[1])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("scale", std::slice::from_ref(&a), |t, v| {
        let o = t.scale(v[0], -1.7)?;
        weighted(t, o, &w_nm)
    })?;
    run.check("relu", &[away_from_zero(n, m, &mut rng)], |t, v| {
        let o = t.relu(v[0])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("softmax_rows", std::slice::from_ref(&a), |t, v| {
        let o = t.softmax_rows(v[0])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("sum_all", std::slice::from_ref(&a), |t, v| {
        let o = t.mul(v[0], v[0])?;
        t.sum_all(o)
    })?;
    run.check("column_sum", std::slice::from_ref(&a), |t, v| {
        let o = t.column_sum(v[0])?;
        weighted(t, o, &w_1m)
    })?;
    run.check("l2_norm_rows", &[away_from_zero(n, m, &mut rng)], |t, v| {
        let o = t.l2_norm_rows(v[0])?;
        weighted(t, o, &w_n1)
    })?;
    run.check("dot", &[a.clone(), a2.clone()], |t, v| t.dot(v[0], v[1]))?;
    run.check("log", &[positive(n, m, &mut rng)], |t, v| {
        let o = t.log(v[0])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("clamp", std::slice::from_ref(&a), |t, v| {
        let o = t.clamp(v[0], -10.0, 10.0)?;
        weighted(t, o, &w_nm)
    })?;
    run.check("recip", &[away_from_zero(n, m, &mut rng)], |t, v| {
        let o = t.recip(v[0])?;
        weighted(t, o, &w_nm)
    })?;
    run.check("transpose", std::slice::from_ref(&a), |t, v| {
        let o = t.transpose(v[0])?;
        weighted(t, o, &w_mn)
    })?;
    let top = gaussian(2, m, &mut rng);
    run.check("concat_rows", &[top, a.clone()], |t, v| {
        let o = t.concat_rows(v)?;
        let w = gaussian(n + 2, m, &mut rng::stream(1, "gradsuite-concat", &[]));
        weighted(t, o, &w)
    })?;

    run.check("contrastive_loss", &[a.clone(), a2.clone()], |t, v| contrastive_loss(t, v[0], v[1]))?;
    run.check("ntxent_with_negatives", &[a.clone(), a2.clone()], |t, v| {
        ntxent_with_negatives(t, v[0], v[1], 0.5)
    })?;
    let y = one_hot_targets(&(0..n).map(|i| (i % 2 == 0).then_some(i % m)).collect::<Vec<_>>(), m);
    run.check("classification_loss", &[a.clone(), a2.clone()], |t, v| {
        let c_o = t.softmax_rows(v[0])?;
        let c_a = t.softmax_rows(v[1])?;
        classification_loss(t, c_o, c_a, &y)
    })?;

    model_checks(&mut run, size, &mut rng)?;
    Ok(run.outcomes)
}

fn model_checks(run: &mut Runner, size: SuiteSize, rng: &mut StreamRng) -> Result<()> {
    let (feature_dim, hidden, classes) = match size {
        SuiteSize::Small => (3, 4, 2),
        SuiteSize::Full => (7, 12, 3),
    };
    let cfg = ModelConfig {
        layers: 3,
        hidden,
        proj_dim: hidden,
    };
    let mut params = ModelParams::init(feature_dim, classes, &cfg, rng)?;
    // Small nonzero biases so the head ReLUs are not all sitting at zero.
    for m in [&mut params.classifier.b1, &mut params.classifier.b2, &mut params.projector.b1, &mut params.projector.b2] {
        for x in m.as_mut_slice() {
            *x = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let toy = PreparedGraph::new(&toy_graph(feature_dim, rng));
    let second = PreparedGraph::new(&path_graph(feature_dim, rng));
    let mats: Vec<Matrix> = params.matrices().into_iter().cloned().collect();
    let layers = cfg.layers;
    let enc_mats = mats[..layers].to_vec();

    let w_nodes = gaussian(toy.features.rows(), hidden, rng);
    run.check("encode", &enc_mats, |t, v| {
        let vars = ParamVars::from_vars(layers, &with_heads(t, v, &mats, layers))?;
        let g = encode(t, &toy, &vars)?;
        weighted(t, g, &w_nodes)
    })?;
    let w_h = gaussian(1, hidden, rng);
    run.check("pool", &[gaussian(5, hidden, rng)], |t, v| {
        let h = pool(t, v[0])?;
        weighted(t, h, &w_h)
    })?;
    let h_in = gaussian(2, hidden, rng).map(|x| 2.0 * x);
    let w_c = gaussian(2, classes, rng);
    run.check("classify", &[vec![h_in.clone()], mats[layers..layers + 4].to_vec()].concat(), |t, v| {
        let head = crate::model::HeadVars {
            w1: v[1],
            b1: v[2],
            w2: v[3],
            b2: v[4],
        };
        let c = classify(t, v[0], &head)?;
        weighted(t, c, &w_c)
    })?;
    let w_p = gaussian(2, cfg.proj_dim, rng);
    run.check("project", &[vec![h_in], mats[layers + 4..].to_vec()].concat(), |t, v| {
        let head = crate::model::HeadVars {
            w1: v[1],
            b1: v[2],
            w2: v[3],
            b2: v[4],
        };
        let p = project(t, v[0], &head)?;
        weighted(t, p, &w_p)
    })?;

    // Full objective on the toy graph alone, with a fixed random offset.
    let offset = gaussian(1, hidden, rng);
    let y_toy = one_hot_targets(&[toy.label], classes);
    let train_cfg = TrainConfig {
        model: cfg,
        ..TrainConfig::default()
    };
    run.check("objective_toy_graph", &mats, |t, v| {
        let vars = ParamVars::from_vars(layers, v)?;
        let h_o = represent(t, &toy, &vars)?;
        let c_o = classify(t, h_o, &vars.classifier)?;
        Ok(objective(t, &vars, h_o, c_o, offset.clone(), &y_toy, &train_cfg)?.total)
    })?;

    // Two-graph batch with offsets from the real augmentation step; one graph
    // labeled and one not.
    let batch = [&toy, &second];
    let reps = represent_values(&params, &batch)?;
    let probs = crate::model::classify_values(&params.classifier, &reps)?;
    let labels = [toy.label, None];
    let targets: Vec<usize> = labels.iter().enumerate().map(|(r, &l)| target_class(l, probs.row(r))).collect();
    let d = centroid_distance(&reps)?;
    let aug = AugmentationConfig::default();
    let mut cand: Vec<StreamRng> = (0..2).map(|i| rng::stream(0, "gradsuite-perturb", &[i])).collect();
    let mut sel: Vec<StreamRng> = (0..2).map(|i| rng::stream(0, "gradsuite-select", &[i])).collect();
    let outcomes = augment_batch(&reps, &targets, &params.classifier, &aug, d, &mut cand, &mut sel)?;
    let mut off = Vec::new();
    for o in &outcomes {
        off.extend_from_slice(o.offset.as_slice());
    }
    let offsets = Matrix::new(2, hidden, off)?;
    let y = one_hot_targets(&labels, classes);
    let mut variants = vec![("objective_two_graph_batch", train_cfg.clone())];
    if size == SuiteSize::Full {
        variants.push((
            "objective_two_graph_batch_ntxent",
            TrainConfig {
                negative_pairs: true,
                ..train_cfg.clone()
            },
        ));
    }
    for (name, tc) in variants {
        run.check(name, &mats, |t, v| {
            let vars = ParamVars::from_vars(layers, v)?;
            let hs = batch.iter().map(|g| represent(t, g, &vars)).collect::<Result<Vec<_>>>()?;
            let h_o = t.concat_rows(&hs)?;
            let c_o = classify(t, h_o, &vars.classifier)?;
            Ok(objective(t, &vars, h_o, c_o, offsets.clone(), &y, &tc)?.total)
        })?;
    }
    Ok(())
}

/// Encoder handles from `enc` plus constant head parameters.
fn with_heads(t: &mut Tape, enc: &[Var], mats: &[Matrix], layers: usize) -> Vec<Var> {
    let mut v = enc.to_vec();
    v.extend(mats[layers..].iter().map(|m| t.constant(m.clone())));
    v
}
