//! MLP and CNN classifiers over a flat parameter vector, with reverse-mode
//! gradients and exact Hessian-vector products.

pub mod checkpoint;
pub(crate) mod kernels;
mod model;
mod spec;

pub use checkpoint::Checkpoint;
pub use model::{argmax, BnStats, Evaluation, Mode, ModelState};
pub use spec::{
    InitScheme, Layout, ModelKind, ModelSpec, ParamRole, ParamSlice, CIFAR_SHAPE, CNN_HIDDEN, MNIST_FEATURES,
};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("input of {got} values is not a whole number of {per_sample}-value samples")]
    InputShape { per_sample: usize, got: usize },
    #[error("batch of {batch} samples has {labels} labels")]
    LabelCount { batch: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: u8, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged: loss = {loss}")]
    Diverged { loss: f64 },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ModelError {
    /// True for the errors that signal numerical divergence of training.
    pub fn is_divergence(&self) -> bool {
        matches!(self, ModelError::Diverged { .. } | ModelError::NonFiniteGradient { .. })
    }
}
