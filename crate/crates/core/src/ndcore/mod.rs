//! Dense tensors, reverse-mode autodiff and the Nesterov SGD optimizer.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId, OpKind};
pub use optim::{sgd_step, OptimizerState};
pub use tensor::Tensor;
