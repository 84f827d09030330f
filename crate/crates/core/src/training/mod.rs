//! Training machinery: losses, optimizers, metrics, the convergence
//! harness for the linear-rate theorem, the training loop itself, and the
//! ablation/impact analysis protocols that interrogate a trained model.

pub mod ablation;
pub mod convergence;
pub mod data;
pub mod impact;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;
