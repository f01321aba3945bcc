//! Fixtures shared by the benchmarks.

use gla_core::data::{build_node_features, generate_synthetic, FeaturePolicy, SyntheticConfig};
use gla_core::GraphDataset;

/// Two-class synthetic set with MUTAG-like graph sizes.
pub fn fixture(num_graphs: usize, seed: u64) -> GraphDataset {
    let cfg = SyntheticConfig {
        num_graphs,
        edge_density_per_class: vec![0.1, 0.25],
        size_range: (12, 28),
        node_label_cap: 7,
        seed,
    };
    let raw = generate_synthetic(&cfg).expect("valid synthetic config");
    build_node_features(&raw, FeaturePolicy::OneHotNodeLabels).expect("node labels present")
}
