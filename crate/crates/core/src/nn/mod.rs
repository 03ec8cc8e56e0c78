//! Layers, declarative network construction, losses and checkpoints.

mod checkpoint;
mod loss;
mod model;
mod spec;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{argmax, error_rate, loss_mae, loss_xent, softmax};
pub use model::{BnRunning, Mode, Model, Param, ParamRole, BN_EPS, BN_MOMENTUM};
pub use spec::{LayerSpec, NetworkSpec, PoolChoice, PoolKind, SampleShape};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("layer {index} ({layer}): {msg}")]
    ShapeChain {
        index: usize,
        layer: &'static str,
        msg: String,
    },
    #[error("layer {index} ({layer}): {source}")]
    Layer {
        index: usize,
        layer: &'static str,
        #[source]
        source: TensorError,
    },
    #[error("layer {index} ({layer}) produced non-finite activations")]
    NonFinite { index: usize, layer: &'static str },
    #[error("input shape {got:?} does not match network input [B, {expected:?}]")]
    Input { got: Vec<usize>, expected: Vec<usize> },
    #[error("invalid network spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
