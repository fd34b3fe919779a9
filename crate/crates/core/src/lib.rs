//! Building blocks for studying generalization in overparameterized
//! networks: models and their derivatives, optimizers, data loading,
//! loss-landscape probes, tangent kernels, pruning and statistics.

pub mod data;
pub mod landscape;
pub mod nn;
pub mod ntk;
pub mod numerics;
pub mod optim;
pub mod oracle;
pub mod pruning;
pub mod stats;
pub mod train;
