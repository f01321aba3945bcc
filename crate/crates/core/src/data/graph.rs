use serde::Serialize;

use crate::matrix::Matrix;

/// Graph structure as read from disk, before node features are chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawGraph {
    pub node_count: usize,
    /// Canonical unordered pairs `(u, v)` with `u < v`, sorted, no duplicates.
    pub edges: Vec<(usize, usize)>,
    pub node_labels: Option<Vec<i64>>,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDataset {
    pub name: String,
    pub graphs: Vec<RawGraph>,
    pub num_classes: usize,
    /// Raw label for each class index, in ascending order.
    pub class_raw_labels: Vec<i64>,
}

impl RawDataset {
    pub fn has_node_labels(&self) -> bool {
        !self.graphs.is_empty() && self.graphs.iter().all(|g| g.node_labels.is_some())
    }

    pub fn mean_nodes(&self) -> f64 {
        mean(self.graphs.iter().map(|g| g.node_count as f64))
    }

    pub fn mean_edges(&self) -> f64 {
        mean(self.graphs.iter().map(|g| g.edges.len() as f64))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphInstance {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_features: Matrix,
    pub label: Option<usize>,
}

impl GraphInstance {
    pub fn degrees(&self) -> Vec<usize> {
        degrees(self.node_count, &self.edges)
    }
}

pub(crate) fn degrees(node_count: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut deg = vec![0; node_count];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    deg
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<GraphInstance>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            graphs: self.graphs.len(),
            classes: self.num_classes,
            feature_dim: self.feature_dim,
            mean_nodes: mean(self.graphs.iter().map(|g| g.node_count as f64)),
            mean_edges: mean(self.graphs.iter().map(|g| g.edges.len() as f64)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub graphs: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
}
