//! Tensors with reverse-mode autodiff, an LSTM-based learnable pooling
//! layer, network building blocks, optimizers and the CIFAR data pipeline.

pub mod autodiff;
pub mod data;
pub mod lstm_pool;
pub mod nn;
pub mod optim;
pub mod real;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use real::{DType, Real};
pub use tensor::{Tensor, TensorError};
