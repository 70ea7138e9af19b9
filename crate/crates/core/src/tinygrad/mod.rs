//! Minimal reverse-mode autodiff with the layers the agents need.

pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod params;
pub mod suite;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use graph::{Graph, IpLayer, Var};
pub use network::{Activation, InputLayout, LayerSpec, ModelId, Network, NetworkSpec};
pub use params::{AdamConfig, ParamSet};
pub use tensor::{gemm, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
}
