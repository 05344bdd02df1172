//! Dense tensors, reverse-mode autodiff and deterministic randomness.

pub mod graph;
pub mod rng;
pub mod tensor;

pub use graph::{sgd_step, Gradient, Graph, NodeId};
pub use rng::{RngStream, StreamPurpose};
pub use tensor::{kl_divergence, matmul, sigmoid, softmax, Tensor, KL_CLAMP};
