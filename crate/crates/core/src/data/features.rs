use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{degrees, GraphDataset, GraphInstance, RawDataset};
use crate::error::{GlaError, Result};
use crate::matrix::Matrix;

/// How node feature rows are derived from graph structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeaturePolicy {
    /// One-hot over the distinct node labels present anywhere in the dataset.
    OneHotNodeLabels,
    /// One-hot degree with `cap + 1` slots; degrees `>= cap` share the last.
    DegreeOneHot { cap: usize },
    ConstantOne,
}

impl FeaturePolicy {
    pub const DEFAULT_DEGREE_CAP: usize = 10;

    pub fn default_for(raw: &RawDataset) -> Self {
        if raw.has_node_labels() {
            FeaturePolicy::OneHotNodeLabels
        } else {
            FeaturePolicy::DegreeOneHot {
                cap: Self::DEFAULT_DEGREE_CAP,
            }
        }
    }
}

impl fmt::Display for FeaturePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeaturePolicy::OneHotNodeLabels => write!(f, "node-labels"),
            FeaturePolicy::DegreeOneHot { cap } => write!(f, "degree:{cap}"),
            FeaturePolicy::ConstantOne => write!(f, "constant"),
        }
    }
}

impl FromStr for FeaturePolicy {
    type Err = GlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node-labels" => Ok(FeaturePolicy::OneHotNodeLabels),
            "constant" => Ok(FeaturePolicy::ConstantOne),
            "degree" => Ok(FeaturePolicy::DegreeOneHot {
                cap: Self::DEFAULT_DEGREE_CAP,
            }),
            other => other
                .strip_prefix("degree:")
                .and_then(|c| c.parse().ok())
                .map(|cap| FeaturePolicy::DegreeOneHot { cap })
                .ok_or_else(|| {
                    GlaError::Config(format!(
                        "unknown feature policy {other:?} (node-labels | degree[:cap] | constant)"
                    ))
                }),
        }
    }
}

pub fn build_node_features(raw: &RawDataset, policy: FeaturePolicy) -> Result<GraphDataset> {
    let (feature_dim, rows): (usize, Box<dyn Fn(usize) -> Result<Matrix>>) = match policy {
        FeaturePolicy::OneHotNodeLabels => {
            if !raw.has_node_labels() {
                return Err(GlaError::Config(format!(
                    "{}: one-hot node-label features requested but node labels are absent",
                    raw.name
                )));
            }
            let vocab: Vec<i64> = raw
                .graphs
                .iter()
                .flat_map(|g| g.node_labels.as_ref().unwrap().iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let dim = vocab.len();
            (
                dim,
                Box::new(move |gi| {
                    let labels = raw.graphs[gi].node_labels.as_ref().unwrap();
                    let mut m = Matrix::zeros(labels.len(), dim);
                    for (r, l) in labels.iter().enumerate() {
                        m.set(r, vocab.binary_search(l).unwrap(), 1.0);
                    }
                    Ok(m)
                }),
            )
        }
        FeaturePolicy::DegreeOneHot { cap } => (
            cap + 1,
            Box::new(move |gi| {
                let g = &raw.graphs[gi];
                let mut m = Matrix::zeros(g.node_count, cap + 1);
                for (r, d) in degrees(g.node_count, &g.edges).into_iter().enumerate() {
                    m.set(r, d.min(cap), 1.0);
                }
                Ok(m)
            }),
        ),
        FeaturePolicy::ConstantOne => (
            1,
            Box::new(|gi| Ok(Matrix::filled(raw.graphs[gi].node_count, 1, 1.0))),
        ),
    };

    let graphs = raw
        .graphs
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            if g.node_count == 0 {
                return Err(GlaError::Dataset(format!("graph {gi} has no nodes")));
            }
            Ok(GraphInstance {
                node_count: g.node_count,
                edges: g.edges.clone(),
                node_features: rows(gi)?,
                label: g.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GraphDataset {
        name: raw.name.clone(),
        graphs,
        num_classes: raw.num_classes,
        feature_dim,
    })
}
