//! Self-supervised node embeddings by contrasting two corrupted views of a graph.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: the graph data model, dataset I/O, adjacency normalisation and splits.
//! * [`views`]: stochastic edge removal and feature masking.
//! * [`ndiff`]: a small dense tensor engine with reverse-mode differentiation.
//! * [`encoder`]: GCN and mean-pooling encoders plus the projection head.
//! * [`objective`]: the contrastive objective, the InfoNCE variant and diagnostics.
//! * [`trainer`]: Glorot initialisation, Adam and the epoch loop.
//! * [`eval`]: the frozen-embedding logistic-regression probe.
//!
//! Real numbers are [`Real`], which is `f64` unless the `f32` feature is enabled.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod ndiff;
pub mod objective;
pub mod rng;
pub mod trainer;
pub mod views;

/// Scalar type used for every stored value.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used for every stored value.
#[cfg(feature = "f32")]
pub type Real = f32;

pub use encoder::{Activation, Arch, EncoderParams, ProjectionParams};
pub use error::{Error, Result};
pub use eval::{EvalReport, Metric, ProbeConfig, ProbeModel, ProtocolOptions};
pub use graph::{Graph, NormKind, NormalizedAdjacency, SplitSpec};
pub use matrix::Matrix;
pub use ndiff::{Gradients, Tape, Var};
pub use objective::{CriticMatrix, LossConfig, LossMode};
pub use trainer::{EpochRecord, TrainConfig, TrainOutcome};
pub use views::{CorruptionParams, GraphView, Provenance};
