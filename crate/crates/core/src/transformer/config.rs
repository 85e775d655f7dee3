use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputTransform {
    /// Features enter the encoder unchanged; requires `d_model == d_features`.
    None,
    /// Per-step affine projection `x·W + b` to `d_model` channels.
    Linear,
    /// One "same"-padded temporal convolution with `n_kernels` output
    /// channels; requires `d_model == n_kernels`.
    Conv1d { kernel: usize, n_kernels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    FixedSinusoidal,
    Learnable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Layer,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Representation at the last observed step.
    LastUnmasked,
    /// Mean over observed steps.
    MeanUnmasked,
}

/// The five searched architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub dim_ffw: usize,
    pub dropout_rate: f64,
}

impl Default for Hyperparams {
    /// The joint setting that worked across all four benchmark subsets.
    fn default() -> Self {
        Self {
            d_model: 30,
            n_heads: 2,
            n_blocks: 2,
            dim_ffw: 10,
            dropout_rate: 0.4,
        }
    }
}

impl Hyperparams {
    /// Tuned per-subset settings for the C-MAPSS benchmark files.
    pub fn for_dataset(name: &str) -> Option<Self> {
        let (d_model, n_blocks, dim_ffw) = match name.to_ascii_uppercase().as_str() {
            "FD001" => (18, 1, 8),
            "FD002" => (26, 2, 10),
            "FD003" => (22, 2, 10),
            "FD004" => (26, 1, 10),
            _ => return None,
        };
        Some(Self {
            d_model,
            n_heads: 2,
            n_blocks,
            dim_ffw,
            dropout_rate: 0.4,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_features: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// Hidden width of each feed-forward sublayer and of the regression head.
    pub dim_ffw: usize,
    pub dropout_rate: f64,
    pub input_transform: InputTransform,
    pub positional_encoding: PositionalEncoding,
    pub norm_kind: NormKind,
    /// Padded sequence length; rows of the positional table.
    pub max_len: usize,
    pub pooling: Pooling,
}

impl ModelConfig {
    /// Config with the given hyperparameters, a linear input projection,
    /// fixed sinusoidal positions, layer normalization and last-step pooling.
    pub fn new(d_features: usize, max_len: usize, hp: Hyperparams) -> Self {
        Self {
            d_features,
            d_model: hp.d_model,
            n_heads: hp.n_heads,
            n_blocks: hp.n_blocks,
            dim_ffw: hp.dim_ffw,
            dropout_rate: hp.dropout_rate,
            input_transform: InputTransform::Linear,
            positional_encoding: PositionalEncoding::FixedSinusoidal,
            norm_kind: NormKind::Layer,
            max_len,
            pooling: Pooling::LastUnmasked,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_blocks: self.n_blocks,
            dim_ffw: self.dim_ffw,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("d_features", self.d_features),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_blocks", self.n_blocks),
            ("dim_ffw", self.dim_ffw),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} is outside [0, 1)", self.dropout_rate));
        }
        match self.input_transform {
            InputTransform::None if self.d_model != self.d_features => bad(format!(
                "without an input transform d_model ({}) must equal d_features ({})",
                self.d_model, self.d_features
            )),
            InputTransform::Conv1d { kernel, n_kernels } if kernel == 0 || n_kernels != self.d_model => {
                bad(format!(
                    "conv1d needs a positive kernel and n_kernels ({n_kernels}) equal to d_model ({})",
                    self.d_model
                ))
            }
            _ => Ok(()),
        }
    }
}
