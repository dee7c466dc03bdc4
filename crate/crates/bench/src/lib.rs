//! Shared fixtures for the benchmarks.

use grace_core::graph::synthetic::PlantedPartition;
use grace_core::{Graph, TrainConfig};

/// A Cora-sized planted-partition graph: 2708 nodes, 7 classes, about 5k edges.
pub fn cora_like() -> Graph {
    PlantedPartition {
        nodes: 2708,
        classes: 7,
        p_in: 0.0085,
        p_out: 0.0003,
        features: 1433,
        q_in: 0.02,
        q_out: 0.01,
    }
    .generate(1)
}

/// The Cora preset with a single epoch.
pub fn one_epoch_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        ..TrainConfig::preset("cora").expect("built-in preset")
    }
}
