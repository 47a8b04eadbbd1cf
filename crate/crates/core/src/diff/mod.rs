//! Differentiable-computation substrate: tensors, a reverse-mode tape,
//! layers, categorical distributions, Adam, gradient checking and
//! checkpoints.

pub mod checkpoint;
pub mod dist;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use dist::{argmax, categorical_entropy, categorical_log_prob, categorical_sample, log_softmax, softmax};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use params::{Activation, Linear, Mlp, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
