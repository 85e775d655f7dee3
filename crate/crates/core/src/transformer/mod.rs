//! Encoder-only transformer regressor: input transform, positional encoding,
//! stacked post-norm attention blocks, masked pooling and a small
//! feed-forward head producing one scaled RUL value per window.

mod config;
mod layers;
mod params;

pub use config::{Hyperparams, InputTransform, ModelConfig, NormKind, Pooling, PositionalEncoding};
pub use layers::{
    additive_key_mask, bind_params, encoder_block, forward, forward_batch, input_transform, multi_head_attention,
    norm_layer, positional_table, scaled_dot_attention, BatchStatsUpdate, ForwardPass, NormMode, RulModel,
    RulPredictor, BN_EPS, BN_MOMENTUM, LN_EPS,
};
pub use params::{ModelParams, ParamEntry, CHECKPOINT_MAGIC};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sample shape {found:?} (pad_to, d_features) does not match the model's {expected:?}")]
    SampleShape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("sample for unit {unit_id} ending at cycle {end_cycle} has no observed steps")]
    EmptyMask { unit_id: u32, end_cycle: u32 },
    #[error("every key position is masked")]
    AllMasked,
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
