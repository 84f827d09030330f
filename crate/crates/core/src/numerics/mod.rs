//! Dense f64 tensors, a record-then-reverse autodiff graph, gradient
//! checking, and deterministic initialization.

pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_multi, GradCheckReport};
pub use graph::{Graph, NodeId, UnaryKind};
pub use tensor::Tensor;
