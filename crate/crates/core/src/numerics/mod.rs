//! Dense arithmetic, deterministic random streams and initializers.

pub mod float_serde;
pub mod init;
mod rng;
mod scalar;
mod tensor;

pub use init::{gaussian, kaiming_uniform, xavier_uniform};
pub use rng::{streams, RngState, RngStream};
pub use scalar::{gemm, Scalar};
pub use tensor::{dot, norm2, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op} at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
