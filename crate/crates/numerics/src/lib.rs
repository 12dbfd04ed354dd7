//! Minimal dense-tensor engine for the retrieval towers: reverse-mode
//! autodiff over a tape of matrix ops, a few fused kernels (attention, LSTM
//! cell, softmax cross-entropy), AdaGrad, and the `MGD1` checkpoint format.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{NumericsError, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use optim::{AdaGrad, StepStats};
pub use params::{ParamGrad, ParamGrads, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
