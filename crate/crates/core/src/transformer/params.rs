use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{InputTransform, ModelConfig, NormKind, PositionalEncoding};
use super::ModelError;
use crate::numerics::Tensor;
use crate::seed::rng_for;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"RULF1";

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in ±√(6 / (fan_in + fan_out)) for a `[fan_in, fan_out]` matrix.
    Xavier,
    Zeros,
    Ones,
    /// N(0, 0.02²).
    SmallNormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// False for running statistics, which are updated outside the optimizer.
    pub trainable: bool,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
    trainable: bool,
}

fn layout(config: &ModelConfig) -> Vec<Slot> {
    let d = config.d_model;
    let f = config.dim_ffw;
    let mut slots = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init, trainable: bool| {
        slots.push(Slot {
            name,
            shape,
            init,
            trainable,
        })
    };
    match config.input_transform {
        InputTransform::None => {}
        InputTransform::Linear => {
            add("input.w".into(), vec![config.d_features, d], Init::Xavier, true);
            add("input.b".into(), vec![d], Init::Zeros, true);
        }
        InputTransform::Conv1d { kernel, n_kernels } => {
            add("input.conv.w".into(), vec![kernel * config.d_features, n_kernels], Init::Xavier, true);
            add("input.conv.b".into(), vec![n_kernels], Init::Zeros, true);
        }
    }
    if config.positional_encoding == PositionalEncoding::Learnable {
        add("pos.table".into(), vec![config.max_len, d], Init::SmallNormal, true);
    }
    for b in 0..config.n_blocks {
        let p = |s: &str| format!("block{b}.{s}");
        for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wa"] {
            add(p(w), vec![d, d], Init::Xavier, true);
        }
        for (norm, ffw) in [("norm1", None), ("norm2", Some(()))] {
            if ffw.is_some() {
                add(p("ffw.w1"), vec![d, f], Init::Xavier, true);
                add(p("ffw.b1"), vec![f], Init::Zeros, true);
                add(p("ffw.w2"), vec![f, d], Init::Xavier, true);
                add(p("ffw.b2"), vec![d], Init::Zeros, true);
            }
            add(p(&format!("{norm}.gamma")), vec![d], Init::Ones, true);
            add(p(&format!("{norm}.beta")), vec![d], Init::Zeros, true);
            if config.norm_kind == NormKind::Batch {
                add(p(&format!("{norm}.running_mean")), vec![d], Init::Zeros, false);
                add(p(&format!("{norm}.running_var")), vec![d], Init::Ones, false);
            }
        }
    }
    add("head.w1".into(), vec![d, f], Init::Xavier, true);
    add("head.b1".into(), vec![f], Init::Zeros, true);
    add("head.w2".into(), vec![f, 1], Init::Xavier, true);
    add("head.b2".into(), vec![1], Init::Zeros, true);
    slots
}

/// Every tensor of the model, in a fixed declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    fn from_entries(entries: Vec<ParamEntry>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Self { entries, index }
    }

    /// Seeded initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(seed, "model/init", 0);
        let small = Normal::new(0.0, 0.02).expect("valid normal");
        let entries = layout(config)
            .into_iter()
            .map(|slot| {
                let tensor = match slot.init {
                    Init::Zeros => Tensor::zeros(&slot.shape),
                    Init::Ones => Tensor::full(&slot.shape, 1.0),
                    Init::Xavier => {
                        let bound = (6.0 / (slot.shape[0] + slot.shape[1]) as f64).sqrt();
                        Tensor::from_fn(&slot.shape, |_| rng.gen_range(-bound..=bound))
                    }
                    Init::SmallNormal => Tensor::from_fn(&slot.shape, |_| small.sample(&mut rng)),
                };
                ParamEntry {
                    name: slot.name,
                    tensor,
                    trainable: slot.trainable,
                }
            })
            .collect();
        Ok(Self::from_entries(entries))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.position(name)?;
        Some(&mut self.entries[i].tensor)
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }

    /// Versioned binary checkpoint: magic `RULF1`, the config as JSON with a
    /// little-endian `u64` length prefix, then every tensor in declaration
    /// order as little-endian `f64`.
    pub fn to_checkpoint(&self, config: &ModelConfig) -> Vec<u8> {
        let cfg = serde_json::to_vec(config).expect("config serializes");
        let n: usize = self.entries.iter().map(|e| e.tensor.numel()).sum();
        let mut out = Vec::with_capacity(5 + 8 + cfg.len() + 8 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        for e in &self.entries {
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, Self), ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_owned());
        if bytes.len() < 13 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(bad("missing RULF1 header"));
        }
        let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let cfg_end = 13usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated config"))?;
        let config: ModelConfig =
            serde_json::from_slice(&bytes[13..cfg_end]).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        config.validate()?;
        let mut rest = &bytes[cfg_end..];
        let mut entries = Vec::new();
        for slot in layout(&config) {
            let n: usize = slot.shape.iter().product();
            if rest.len() < n * 8 {
                return Err(bad("truncated tensor data"));
            }
            let data = rest[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            rest = &rest[n * 8..];
            entries.push(ParamEntry {
                name: slot.name,
                tensor: Tensor::new(slot.shape, data)?,
                trainable: slot.trainable,
            });
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok((config, Self::from_entries(entries)))
    }
}
