//! Conv-LSTM regressor from speech features to a respiration trace.

mod ccc;
mod checkpoint;
mod config;
mod loss;
mod network;
mod params;

pub use ccc::{ccc, CccStats};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use config::{
    param_count, BranchConfig, ModelConfig, DEFAULT_CONV_WIDTH, DEFAULT_EMBED_UNITS,
    DEFAULT_LSTM_LAYERS, DEFAULT_LSTM_UNITS,
};
pub use loss::{embedding_activations, forward, loss, loss_and_grad, predict, CHUNK_SEGMENTS};
pub(crate) use loss::{loss_and_grad_subset, validate as validate_segments};
pub use params::{init_params, ConvParams, LstmParams, ModelParams, Tensor};
