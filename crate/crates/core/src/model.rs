//! Residual GCN encoder, sum pooling, classifier head and projection head.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::GraphInstance;
use crate::error::{GlaError, Result};
use crate::matrix::{Matrix, SparseMatrix};

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for one graph, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    node_count: usize,
    matrix: Arc<SparseMatrix>,
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// `(row, col, weight)` in row-major order, both directions of every edge
    /// plus one self-connection per node.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        self.matrix.triplets()
    }

    pub fn sparse(&self) -> Arc<SparseMatrix> {
        Arc::clone(&self.matrix)
    }
}

pub fn normalize_adjacency(g: &GraphInstance) -> NormalizedAdjacency {
    let n = g.node_count;
    // Degree in A + I.
    let deg: Vec<f64> = g.degrees().into_iter().map(|d| (d + 1) as f64).collect();
    let mut triplets = Vec::with_capacity(n + 2 * g.edges.len());
    for (i, &d) in deg.iter().enumerate() {
        triplets.push((i, i, 1.0 / d));
    }
    for &(u, v) in &g.edges {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    let matrix = SparseMatrix::from_triplets(n, &triplets).expect("edge endpoints below node_count");
    NormalizedAdjacency {
        node_count: n,
        matrix: Arc::new(matrix),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub proj_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 128,
            proj_dim: 128,
        }
    }
}

/// Two-layer perceptron `relu(h·W₁ + b₁)·W₂ + b₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl Head {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: glorot(input, hidden, rng),
            b1: Matrix::zeros(1, hidden),
            w2: glorot(hidden, output, rng),
            b2: Matrix::zeros(1, output),
        }
    }

    fn matrices(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn matrices_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `feature_dim × hidden`, then `hidden × hidden` for each further layer.
    pub encoder: Vec<Matrix>,
    pub classifier: Head,
    pub projector: Head,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Matrix::new(fan_in, fan_out, data).expect("length matches")
}

impl ModelParams {
    pub fn init(feature_dim: usize, num_classes: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 || cfg.proj_dim == 0 || feature_dim == 0 || num_classes == 0 {
            return Err(GlaError::Config(format!(
                "degenerate model: {cfg:?}, feature_dim {feature_dim}, classes {num_classes}"
            )));
        }
        let mut encoder = vec![glorot(feature_dim, cfg.hidden, rng)];
        for _ in 1..cfg.layers {
            encoder.push(glorot(cfg.hidden, cfg.hidden, rng));
        }
        let classifier = Head::init(cfg.hidden, cfg.hidden, num_classes, rng);
        let projector = Head::init(cfg.hidden, cfg.hidden, cfg.proj_dim, rng);
        Ok(Self {
            encoder,
            classifier,
            projector,
        })
    }

    pub fn hidden(&self) -> usize {
        self.encoder.last().map_or(0, Matrix::cols)
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    /// All parameter matrices in canonical order: encoder layers, then the
    /// classifier's `w1 b1 w2 b2`, then the projector's.
    pub fn matrices(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.encoder.iter().collect();
        v.extend(self.classifier.matrices());
        v.extend(self.projector.matrices());
        v
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self.encoder.iter_mut().collect();
        v.extend(self.classifier.matrices_mut());
        v.extend(self.projector.matrices_mut());
        v
    }

    /// Rebuilds parameters from the canonical matrix order.
    pub fn from_matrices(encoder_layers: usize, mut mats: Vec<Matrix>) -> Result<Self> {
        if mats.len() != encoder_layers + 8 {
            return Err(GlaError::Checkpoint(format!(
                "expected {} matrices, found {}",
                encoder_layers + 8,
                mats.len()
            )));
        }
        let mut rest = mats.split_off(encoder_layers);
        let mut take = || rest.remove(0);
        let classifier = Head {
            w1: take(),
            b1: take(),
            w2: take(),
            b2: take(),
        };
        let projector = Head {
            w1: take(),
            b1: take(),
            w2: take(),
            b2: take(),
        };
        let params = Self {
            encoder: mats,
            classifier,
            projector,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks the shape chain between layers and heads.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(GlaError::Checkpoint(format!("inconsistent shapes: {what}")));
        let Some(first) = self.encoder.first() else {
            return bad("no encoder layers");
        };
        let hidden = first.cols();
        if self.encoder[1..].iter().any(|m| m.shape() != (hidden, hidden)) {
            return bad("encoder chain");
        }
        for (name, h) in [("classifier", &self.classifier), ("projector", &self.projector)] {
            let ok = h.w1.rows() == hidden
                && h.b1.shape() == (1, h.w1.cols())
                && h.w2.rows() == h.w1.cols()
                && h.b2.shape() == (1, h.w2.cols());
            if !ok {
                return bad(name);
            }
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        let encoder = self.encoder.iter().map(|m| tape.leaf(m.clone(), requires_grad)).collect();
        let mut head = |h: &Head| HeadVars {
            w1: tape.leaf(h.w1.clone(), requires_grad),
            b1: tape.leaf(h.b1.clone(), requires_grad),
            w2: tape.leaf(h.w2.clone(), requires_grad),
            b2: tape.leaf(h.b2.clone(), requires_grad),
        };
        let classifier = head(&self.classifier);
        let projector = head(&self.projector);
        ParamVars {
            encoder,
            classifier,
            projector,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl HeadVars {
    /// Registers a standalone head.
    pub fn register(head: &Head, tape: &mut Tape, requires_grad: bool) -> Self {
        Self {
            w1: tape.leaf(head.w1.clone(), requires_grad),
            b1: tape.leaf(head.b1.clone(), requires_grad),
            w2: tape.leaf(head.w2.clone(), requires_grad),
            b2: tape.leaf(head.b2.clone(), requires_grad),
        }
    }

    pub fn vars(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Hidden layer `relu(h·W₁ + b₁)` followed by the linear output layer.
    pub fn logits(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let z = tape.matmul(h, self.w1)?;
        let z = tape.add_row(z, self.b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, self.w2)?;
        tape.add_row(z, self.b2)
    }
}

/// Tape handles for every parameter matrix of a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub encoder: Vec<Var>,
    pub classifier: HeadVars,
    pub projector: HeadVars,
}

impl ParamVars {
    /// Inverse of [`ParamVars::vars`].
    pub fn from_vars(encoder_layers: usize, vars: &[Var]) -> Result<Self> {
        if vars.len() != encoder_layers + 8 {
            return Err(GlaError::Config(format!(
                "expected {} parameter handles, got {}",
                encoder_layers + 8,
                vars.len()
            )));
        }
        let head = |v: &[Var]| HeadVars {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
        };
        Ok(Self {
            encoder: vars[..encoder_layers].to_vec(),
            classifier: head(&vars[encoder_layers..encoder_layers + 4]),
            projector: head(&vars[encoder_layers + 4..]),
        })
    }

    /// Same order as [`ModelParams::matrices`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.clone();
        v.extend(self.classifier.vars());
        v.extend(self.projector.vars());
        v
    }
}

/// Graph inputs that do not change during training.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub adjacency: Arc<SparseMatrix>,
    pub features: Matrix,
    pub label: Option<usize>,
}

impl PreparedGraph {
    pub fn new(g: &GraphInstance) -> Self {
        Self {
            adjacency: normalize_adjacency(g).sparse(),
            features: g.node_features.clone(),
            label: g.label,
        }
    }
}

/// Node embeddings after all encoder layers. Layer 0 is a plain GCN layer;
/// later layers add their input back when the shapes agree.
pub fn encode(tape: &mut Tape, graph: &PreparedGraph, vars: &ParamVars) -> Result<Var> {
    let mut g = tape.constant(graph.features.clone());
    for (l, &theta) in vars.encoder.iter().enumerate() {
        let agg = tape.spmm(Arc::clone(&graph.adjacency), g)?;
        let z = tape.matmul(agg, theta)?;
        let z = tape.relu(z)?;
        g = if l > 0 && tape.value(z).shape() == tape.value(g).shape() {
            tape.add(z, g)?
        } else {
            z
        };
    }
    Ok(g)
}

/// Global sum pooling: `n × h -> 1 × h`.
pub fn pool(tape: &mut Tape, nodes: Var) -> Result<Var> {
    if tape.value(nodes).rows() == 0 {
        return Err(GlaError::Domain {
            op: "pool",
            detail: "graph without nodes".into(),
        });
    }
    tape.column_sum(nodes)
}

/// Graph representation `H` for one graph.
pub fn represent(tape: &mut Tape, graph: &PreparedGraph, vars: &ParamVars) -> Result<Var> {
    let nodes = encode(tape, graph, vars)?;
    pool(tape, nodes)
}

/// Class probabilities for each row of `h`.
pub fn classify(tape: &mut Tape, h: Var, head: &HeadVars) -> Result<Var> {
    let logits = head.logits(tape, h)?;
    tape.softmax_rows(logits)
}

/// Projections for each row of `h`; the output layer is linear.
pub fn project(tape: &mut Tape, h: Var, head: &HeadVars) -> Result<Var> {
    head.logits(tape, h)
}

/// Gradient-free class probabilities for the rows of `h`.
pub fn classify_values(head: &Head, h: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = HeadVars::register(head, &mut tape, false);
    let hv = tape.constant(h.clone());
    let p = classify(&mut tape, hv, &vars)?;
    Ok(tape.value(p).clone())
}

/// Gradient-free representations for a set of graphs, one row per graph.
pub fn represent_values(params: &ModelParams, graphs: &[&PreparedGraph]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let mut rows = Vec::with_capacity(graphs.len() * params.hidden());
    for g in graphs {
        let h = represent(&mut tape, g, &vars)?;
        rows.extend_from_slice(tape.value(h).as_slice());
    }
    Matrix::new(graphs.len(), params.hidden(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn graph(n: usize, edges: &[(usize, usize)], dim: usize) -> GraphInstance {
        GraphInstance {
            node_count: n,
            edges: edges.to_vec(),
            node_features: Matrix::filled(n, dim, 1.0),
            label: Some(0),
        }
    }

    #[test]
    fn single_node_identity() {
        let a = normalize_adjacency(&graph(1, &[], 1));
        assert_eq!(a.entries(), vec![(0, 0, 1.0)]);
    }

    #[test]
    fn two_nodes_one_edge_all_half() {
        let a = normalize_adjacency(&graph(2, &[(0, 1)], 1));
        assert_eq!(
            a.entries(),
            vec![(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)]
        );
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let g = PreparedGraph::new(&graph(4, &[(0, 1), (1, 2), (2, 3)], 3));
        let mut params = ModelParams::init(3, 2, &ModelConfig { layers: 3, hidden: 5, proj_dim: 4 }, &mut rng::stream(0, "t", &[])).unwrap();
        params.encoder.iter_mut().for_each(|m| m.as_mut_slice().fill(0.0));
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let out = encode(&mut tape, &g, &vars).unwrap();
        assert_eq!(tape.value(out), &Matrix::zeros(4, 5));
    }

    #[test]
    fn single_node_smoke() {
        let g = PreparedGraph::new(&graph(1, &[], 1));
        let params = ModelParams::init(1, 2, &ModelConfig { layers: 3, hidden: 1, proj_dim: 1 }, &mut rng::stream(1, "t", &[])).unwrap();
        let h = represent_values(&params, &[&g]).unwrap();
        assert!(h.is_finite());
        assert_eq!(h.shape(), (1, 1));
    }

    #[test]
    fn pool_sums_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let h = pool(&mut tape, x).unwrap();
        assert_eq!(tape.value(h).as_slice(), &[4.0, 6.0]);
        let one = tape.constant(Matrix::from_rows(&[[7.0, -1.0]]));
        let h = pool(&mut tape, one).unwrap();
        assert_eq!(tape.value(h).as_slice(), &[7.0, -1.0]);
    }

    #[test]
    fn zero_classifier_is_uniform_and_zero_projector_is_zero() {
        let cfg = ModelConfig { layers: 1, hidden: 4, proj_dim: 3 };
        let mut params = ModelParams::init(2, 3, &cfg, &mut rng::stream(2, "t", &[])).unwrap();
        for m in params.matrices_mut() {
            m.as_mut_slice().fill(0.0);
        }
        let h = Matrix::from_rows(&[[1.0, -2.0, 3.0, 0.5]]);
        let p = classify_values(&params.classifier, &h).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut tape = Tape::new();
        let vars = HeadVars::register(&params.projector, &mut tape, false);
        let hv = tape.constant(h);
        let z = project(&mut tape, hv, &vars).unwrap();
        assert_eq!(tape.value(z), &Matrix::zeros(1, 3));
    }

    #[test]
    fn from_matrices_round_trip_and_validation() {
        let cfg = ModelConfig { layers: 2, hidden: 3, proj_dim: 2 };
        let params = ModelParams::init(4, 2, &cfg, &mut rng::stream(3, "t", &[])).unwrap();
        let mats: Vec<Matrix> = params.matrices().into_iter().cloned().collect();
        assert_eq!(ModelParams::from_matrices(2, mats.clone()).unwrap(), params);
        let mut broken = mats;
        broken[1] = Matrix::zeros(2, 3);
        assert!(ModelParams::from_matrices(2, broken).is_err());
    }
}
