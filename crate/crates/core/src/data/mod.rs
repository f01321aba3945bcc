//! Graph collections: TUDataset parsing and writing, node features,
//! synthetic fixtures and cross-validation splits.

mod features;
mod folds;
mod graph;
mod synthetic;
mod tudataset;

pub use features::{build_node_features, FeaturePolicy};
pub use folds::{assign_labels, make_folds, FoldPlan};
pub use graph::{DatasetSummary, GraphDataset, GraphInstance, RawDataset, RawGraph};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use tudataset::{parse_tudataset, parse_tudataset_raw, write_tudataset, ParseStats};
