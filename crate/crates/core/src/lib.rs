//! Semi-supervised graph classification with label-invariant augmentation
//! in representation space.
//!
//! The pipeline is a residual GCN encoder with sum pooling, a classifier
//! head and a projection head, trained jointly on a positive-pair cosine
//! loss and a cross-entropy loss. Positive pairs come from perturbing each
//! graph representation in random directions and keeping only candidates the
//! current classifier still assigns to the graph's class.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod gradsuite;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod train;

pub use augment::{AugmentationConfig, AugmentationOutcome, DistScope, Strategy};
pub use autodiff::{Gradients, Tape, Var};
pub use data::{FoldPlan, GraphDataset, GraphInstance};
pub use error::{GlaError, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use matrix::Matrix;
pub use model::{ModelConfig, ModelParams};
pub use train::{train_fold, FoldResult, TrainConfig};
