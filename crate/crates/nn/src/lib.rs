//! Minimal tensor library with convolution, LSTM and dense layers, manual
//! backpropagation, optimizers and a binary weight format.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod scalar;
pub mod sequential;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use layers::{weight_count, ActivationKind, Layer, LayerKind, LayerSpec, Param};
pub use loss::LossKind;
pub use optim::{OptimConfig, Optimizer, OptimizerKind};
pub use scalar::Scalar;
pub use sequential::Sequential;
pub use tensor::Tensor;
