//! Gradient adjustment learning for small multilayer perceptrons.
//!
//! The crate is layered bottom-up: dense linear algebra and seeded
//! randomness, an MLP with explicit backprop, losses on output features,
//! first-order optimizers, the adjustment algorithm itself, and the
//! surrounding bound checks, data loading, statistics and experiment runner.

pub mod data;
pub mod error;
pub mod gal;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod stats;
pub mod theory;

pub use error::{GalError, Result};
pub use linalg::{cosine_similarity, l2_norm, Matrix, SeededRng};
pub use loss::{FeatureLoss, LossKind, SupervisedLoss, Targets};
pub use mlp::{MlpArchitecture, MlpModel};
pub use optim::{Optimizer, OptimizerKind, OptimizerSpec};
