//! Matrices, reverse-mode differentiation, parameters, Adam and seeded RNG.

mod array;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod rng;

pub use array::{Array2, FeatureSeq};
pub(crate) use array::dot;
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Conv1dSpec, Graph, OpKind, Var};
pub(crate) use graph::{gru_cell, log_softmax_at, softmax_columns};
pub use optim::{adam_step, adam_step_with, clip_grad_norm, AdamConfig};
pub use params::{ParamEntry, ParamStore};
pub use rng::{sample_gaussian, RngState};
