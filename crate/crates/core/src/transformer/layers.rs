use std::path::Path;

use rand::RngCore;

use super::config::{InputTransform, ModelConfig, NormKind, Pooling, PositionalEncoding};
use super::params::ModelParams;
use super::ModelError;
use crate::numerics::{Graph, Tensor, Var, MASK_NEG};
use crate::windowing::WindowedSample;

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

const EVAL_CHUNK: usize = 64;

/// Record every tensor of `params` on `g`, in declaration order. Trainable
/// tensors become gradient leaves, running statistics become constants.
pub fn bind_params(g: &mut Graph, params: &ModelParams) -> Vec<Var> {
    params
        .entries()
        .iter()
        .map(|e| {
            if e.trainable {
                g.param(e.tensor.clone())
            } else {
                g.constant(e.tensor.clone())
            }
        })
        .collect()
}

fn var_of(params: &ModelParams, vars: &[Var], name: &str) -> Result<Var, ModelError> {
    params
        .position(name)
        .and_then(|i| vars.get(i).copied())
        .ok_or_else(|| ModelError::Config(format!("parameter {name} is not bound")))
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Var {
    match rng {
        Some(r) => g.dropout(x, rate, true, &mut **r),
        None => x,
    }
}

/// `[B,T,F] -> [B,T,d_model]`.
pub fn input_transform(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ModelParams,
    vars: &[Var],
    x: Var,
) -> Result<Var, ModelError> {
    Ok(match config.input_transform {
        InputTransform::None => x,
        InputTransform::Linear => {
            let w = var_of(params, vars, "input.w")?;
            let b = var_of(params, vars, "input.b")?;
            g.linear(x, w, b)?
        }
        InputTransform::Conv1d { kernel, .. } => {
            let w = var_of(params, vars, "input.conv.w")?;
            let b = var_of(params, vars, "input.conv.b")?;
            let taps = g.unfold_time(x, kernel)?;
            g.linear(taps, w, b)?
        }
    })
}

/// Fixed sinusoidal table with `len` rows:
/// `(pos, 2i) = sin(pos / 10000^(2i/d))`, `(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn positional_table(d_model: usize, len: usize) -> Tensor {
    Tensor::from_fn(&[len, d_model], |idx| {
        let (pos, col) = (idx / d_model, idx % d_model);
        let i2 = (col - col % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / d_model as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Additive key mask of shape `[B,1,T]`: 0 at observed steps, [`MASK_NEG`]
/// at padding.
pub fn additive_key_mask(masks: &[&[u8]]) -> Result<Tensor, ModelError> {
    let t = masks.first().map_or(0, |m| m.len());
    let mut data = Vec::with_capacity(masks.len() * t);
    for m in masks {
        if m.len() != t {
            return Err(ModelError::SampleShape {
                expected: (t, 0),
                found: (m.len(), 0),
            });
        }
        if !m.contains(&1) {
            return Err(ModelError::AllMasked);
        }
        data.extend(m.iter().map(|&v| if v == 1 { 0.0 } else { MASK_NEG }));
    }
    Ok(Tensor::new(vec![masks.len(), 1, t], data)?)
}

/// `softmax(Q Kᵀ / √d_k + mask) V` for `[B,T,d_k]` operands. Returns the
/// output and the `[B,T,T]` weights.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
) -> Result<(Var, Var), ModelError> {
    let dk = *g.shape(q).last().ok_or(ModelError::AllMasked)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.mul_scalar(scores, 1.0 / (dk as f64).sqrt());
    let weights = g.softmax(scores, mask)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head self-attention over `x: [B,T,d]`. Head `h` uses columns
/// `h*d_head..(h+1)*d_head` of each projection. Returns the output and the
/// per-head weights.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    [wq, wk, wv, wa]: [Var; 4],
    n_heads: usize,
    mask: Option<Var>,
) -> Result<(Var, Vec<Var>), ModelError> {
    let d = *g.shape(x).last().ok_or(ModelError::AllMasked)?;
    if n_heads == 0 || d % n_heads != 0 {
        return Err(ModelError::Config(format!("d_model {d} is not divisible by {n_heads} heads")));
    }
    let dh = d / n_heads;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let axis = g.shape(x).len() - 1;
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, axis, h * dh, dh)?,
                g.slice(k, axis, h * dh, dh)?,
                g.slice(v, axis, h * dh, dh)?,
            )
        };
        let (out, w) = scaled_dot_attention(g, qh, kh, vh, mask)?;
        heads.push(out);
        weights.push(w);
    }
    let joined = if n_heads == 1 { heads[0] } else { g.concat(&heads)? };
    Ok((g.matmul(joined, wa)?, weights))
}

pub enum NormMode {
    /// Per-step normalization over the feature axis.
    Layer,
    /// Per-channel statistics over observed `(batch, step)` positions;
    /// `mask` is `[B,T,1]` with `count` ones.
    BatchTrain { mask: Var, count: usize },
    /// Fixed per-channel statistics.
    BatchEval { mean: Var, var: Var },
}

/// Normalize `x: [B,T,d]` and apply `γ ∘ x̂ + β`. In batch-training mode the
/// batch mean and population variance are returned as well.
pub fn norm_layer(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: &NormMode,
) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>), ModelError> {
    let (xhat, stats) = match *mode {
        NormMode::Layer => {
            let axis = g.shape(x).len() - 1;
            let mean = g.mean(x, axis)?;
            let var = g.var(x, axis)?;
            let centered = g.sub(x, mean)?;
            let v = g.add_scalar(var, LN_EPS);
            let sd = g.sqrt(v);
            (g.div(centered, sd)?, None)
        }
        NormMode::BatchTrain { mask, count } => {
            let inv = 1.0 / count as f64;
            let xm = g.mul(x, mask)?;
            let s = g.sum(xm, 0)?;
            let s = g.sum(s, 1)?;
            let mean = g.mul_scalar(s, inv);
            let centered = g.sub(x, mean)?;
            let cm = g.mul(centered, mask)?;
            let sq = g.mul(cm, cm)?;
            let s2 = g.sum(sq, 0)?;
            let s2 = g.sum(s2, 1)?;
            let var = g.mul_scalar(s2, inv);
            let stats = (g.value(mean).data().to_vec(), g.value(var).data().to_vec());
            let v = g.add_scalar(var, BN_EPS);
            let sd = g.sqrt(v);
            (g.div(centered, sd)?, Some(stats))
        }
        NormMode::BatchEval { mean, var } => {
            let centered = g.sub(x, mean)?;
            let v = g.add_scalar(var, BN_EPS);
            let sd = g.sqrt(v);
            (g.div(centered, sd)?, None)
        }
    };
    let scaled = g.mul(xhat, gamma)?;
    Ok((g.add(scaled, beta)?, stats))
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStatsUpdate {
    pub mean_index: usize,
    pub var_index: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStatsUpdate {
    /// `running ← (1 − m)·running + m·batch` with momentum [`BN_MOMENTUM`].
    pub fn apply(&self, params: &mut ModelParams) {
        let entries = params.entries_mut();
        for (idx, batch) in [(self.mean_index, &self.mean), (self.var_index, &self.var)] {
            for (r, b) in entries[idx].tensor.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }
}

fn block_norm(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ModelParams,
    vars: &[Var],
    prefix: &str,
    x: Var,
    obs_mask: Var,
    train: bool,
    updates: &mut Vec<BatchStatsUpdate>,
) -> Result<Var, ModelError> {
    let gamma = var_of(params, vars, &format!("{prefix}.gamma"))?;
    let beta = var_of(params, vars, &format!("{prefix}.beta"))?;
    let mode = match (config.norm_kind, train) {
        (NormKind::Layer, _) => NormMode::Layer,
        (NormKind::Batch, true) => NormMode::BatchTrain {
            mask: obs_mask,
            count: g.value(obs_mask).data().iter().filter(|&&m| m != 0.0).count(),
        },
        (NormKind::Batch, false) => NormMode::BatchEval {
            mean: var_of(params, vars, &format!("{prefix}.running_mean"))?,
            var: var_of(params, vars, &format!("{prefix}.running_var"))?,
        },
    };
    let (out, stats) = norm_layer(g, x, gamma, beta, &mode)?;
    if let Some((mean, var)) = stats {
        let missing = || ModelError::Config(format!("{prefix} has no running statistics"));
        updates.push(BatchStatsUpdate {
            mean_index: params.position(&format!("{prefix}.running_mean")).ok_or_else(missing)?,
            var_index: params.position(&format!("{prefix}.running_var")).ok_or_else(missing)?,
            mean,
            var,
        });
    }
    Ok(out)
}

/// Post-norm encoder block:
/// `y1 = norm(x + drop(MHA(x)))`, `y2 = norm(y1 + drop(FFW(y1)))`.
/// `key_mask` is `[B,1,T]` additive, `obs_mask` is `[B,T,1]` binary. Dropout
/// is active exactly when `rng` is given.
#[allow(clippy::too_many_arguments)]
pub fn encoder_block(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ModelParams,
    vars: &[Var],
    block: usize,
    x: Var,
    key_mask: Option<Var>,
    obs_mask: Var,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(Var, Vec<Var>, Vec<BatchStatsUpdate>), ModelError> {
    let name = |s: &str| format!("block{block}.{s}");
    let train = rng.is_some();
    let mut updates = Vec::new();
    let w = [
        var_of(params, vars, &name("attn.wq"))?,
        var_of(params, vars, &name("attn.wk"))?,
        var_of(params, vars, &name("attn.wv"))?,
        var_of(params, vars, &name("attn.wa"))?,
    ];
    let (attn, weights) = multi_head_attention(g, x, w, config.n_heads, key_mask)?;
    let attn = dropout(g, attn, config.dropout_rate, &mut rng);
    let res = g.add(x, attn)?;
    let y1 = block_norm(g, config, params, vars, &name("norm1"), res, obs_mask, train, &mut updates)?;

    let h = g.linear(y1, var_of(params, vars, &name("ffw.w1"))?, var_of(params, vars, &name("ffw.b1"))?)?;
    let h = g.relu(h);
    let h = g.linear(h, var_of(params, vars, &name("ffw.w2"))?, var_of(params, vars, &name("ffw.b2"))?)?;
    let h = dropout(g, h, config.dropout_rate, &mut rng);
    let res = g.add(y1, h)?;
    let y2 = block_norm(g, config, params, vars, &name("norm2"), res, obs_mask, train, &mut updates)?;
    Ok((y2, weights, updates))
}

/// Handles produced by one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[B,1]` scaled predictions.
    pub prediction: Var,
    /// `[B,T,T]` weights, indexed `[block][head]`. `T` is the batch's
    /// cropped length.
    pub attention: Vec<Vec<Var>>,
    pub batch_stats: Vec<BatchStatsUpdate>,
    /// Number of leading steps of each `pad_to` frame that were evaluated.
    pub steps: usize,
}

/// Forward a batch of samples. Trailing steps masked in every sample are
/// dropped before the encoder, which changes nothing observable because
/// padding never reaches an observed position.
pub fn forward_batch(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ModelParams,
    vars: &[Var],
    samples: &[&WindowedSample],
    mut rng: Option<&mut dyn RngCore>,
) -> Result<ForwardPass, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if vars.len() != params.entries().len() {
        return Err(ModelError::Config(format!(
            "{} bound variables for {} parameters",
            vars.len(),
            params.entries().len()
        )));
    }
    let (f, d) = (config.d_features, config.d_model);
    let mut t = 0;
    for s in samples {
        if s.pad_to != config.max_len || s.d_features != f || s.mask.len() != s.pad_to {
            return Err(ModelError::SampleShape {
                expected: (config.max_len, f),
                found: (s.pad_to, s.d_features),
            });
        }
        let last = s.last_unmasked().ok_or(ModelError::EmptyMask {
            unit_id: s.unit_id,
            end_cycle: s.end_cycle,
        })?;
        t = t.max(last + 1);
    }
    let b = samples.len();

    let mut x = vec![0.0; b * t * f];
    let mut obs = vec![0.0; b * t];
    let mut key = vec![0.0; b * t];
    let mut pool = vec![0.0; b * t];
    for (i, s) in samples.iter().enumerate() {
        for j in 0..t {
            if s.mask[j] == 1 {
                x[(i * t + j) * f..(i * t + j + 1) * f].copy_from_slice(s.row(j));
                obs[i * t + j] = 1.0;
            } else {
                key[i * t + j] = MASK_NEG;
            }
        }
        match config.pooling {
            Pooling::LastUnmasked => pool[i * t + s.last_unmasked().expect("checked above")] = 1.0,
            Pooling::MeanUnmasked => {
                let n = s.window_len() as f64;
                for j in 0..t {
                    if s.mask[j] == 1 {
                        pool[i * t + j] = 1.0 / n;
                    }
                }
            }
        }
    }
    let x = g.constant(Tensor::new(vec![b, t, f], x)?);
    let obs_mask = g.constant(Tensor::new(vec![b, t, 1], obs)?);
    let key_mask = g.constant(Tensor::new(vec![b, 1, t], key)?);
    let selector = g.constant(Tensor::new(vec![b, 1, t], pool)?);

    let u = input_transform(g, config, params, vars, x)?;
    let pe = match config.positional_encoding {
        PositionalEncoding::FixedSinusoidal => g.constant(positional_table(d, t)),
        PositionalEncoding::Learnable => {
            let table = var_of(params, vars, "pos.table")?;
            g.slice(table, 0, 0, t)?
        }
    };
    let pe = g.mul(pe, obs_mask)?;
    let mut h = g.add(u, pe)?;

    let mut attention = Vec::with_capacity(config.n_blocks);
    let mut batch_stats = Vec::new();
    for block in 0..config.n_blocks {
        let (out, weights, stats) =
            encoder_block(g, config, params, vars, block, h, Some(key_mask), obs_mask, reborrow(&mut rng))?;
        h = out;
        attention.push(weights);
        batch_stats.extend(stats);
    }

    let pooled = g.matmul(selector, h)?;
    let pooled = g.reshape(pooled, &[b, d])?;
    let z = g.linear(pooled, var_of(params, vars, "head.w1")?, var_of(params, vars, "head.b1")?)?;
    let z = g.relu(z);
    let z = dropout(g, z, config.dropout_rate, &mut rng);
    let prediction = g.linear(z, var_of(params, vars, "head.w2")?, var_of(params, vars, "head.b2")?)?;
    Ok(ForwardPass {
        prediction,
        attention,
        batch_stats,
        steps: t,
    })
}

/// Eval-mode prediction for one sample.
pub fn forward(config: &ModelConfig, params: &ModelParams, sample: &WindowedSample) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params);
    let pass = forward_batch(&mut g, config, params, &vars, &[sample], None)?;
    Ok(g.value(pass.prediction).data()[0])
}

/// Anything that maps windows to scaled RUL predictions.
pub trait RulPredictor {
    /// `(pad_to, d_features)` accepted by [`RulPredictor::predict_scaled`].
    fn expected_shape(&self) -> (usize, usize);
    fn predict_scaled(&self, samples: &[WindowedSample]) -> Result<Vec<f64>, ModelError>;
}

/// A configured model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RulModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl RulModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        self.params.to_checkpoint(&self.config)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, ModelError> {
        let (config, params) = ModelParams::from_checkpoint(bytes)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint(&bytes)
    }
}

impl RulPredictor for RulModel {
    fn expected_shape(&self) -> (usize, usize) {
        (self.config.max_len, self.config.d_features)
    }

    fn predict_scaled(&self, samples: &[WindowedSample]) -> Result<Vec<f64>, ModelError> {
        let refs: Vec<&WindowedSample> = samples.iter().collect();
        self.predict_batch(&refs)
    }
}

impl RulModel {
    /// Eval-mode predictions, computed in chunks of similar-length windows.
    pub fn predict_batch(&self, samples: &[&WindowedSample]) -> Result<Vec<f64>, ModelError> {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by_key(|&i| samples[i].last_unmasked());
        let mut out = vec![0.0; samples.len()];
        for chunk in order.chunks(EVAL_CHUNK) {
            let batch: Vec<&WindowedSample> = chunk.iter().map(|&i| samples[i]).collect();
            let mut g = Graph::new();
            let vars = bind_params(&mut g, &self.params);
            let pass = forward_batch(&mut g, &self.config, &self.params, &vars, &batch, None)?;
            for (&i, &y) in chunk.iter().zip(g.value(pass.prediction).data()) {
                out[i] = y;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::config::Hyperparams;

    fn sample(rows: &[&[f64]], mask: &[u8]) -> WindowedSample {
        let d = rows[0].len();
        WindowedSample {
            features: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            mask: mask.to_vec(),
            target_scaled: 0.5,
            unit_id: 1,
            end_cycle: 3,
            pad_to: mask.len(),
            d_features: d,
        }
    }

    #[test]
    fn sinusoid_entries() {
        let t = positional_table(4, 3);
        assert_eq!(t.get(&[0, 0]), 0.0);
        assert_eq!(t.get(&[0, 1]), 1.0);
        assert!((t.get(&[1, 0]) - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((t.get(&[1, 2]) - (1.0f64 / 100.0).sin()).abs() < 1e-15);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn layer_norm_of_one_two_three() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let gamma = g.constant(Tensor::full(&[3], 1.0));
        let beta = g.constant(Tensor::zeros(&[3]));
        let (y, _) = norm_layer(&mut g, x, gamma, beta, &NormMode::Layer).unwrap();
        let expected = 1.0 / (2.0f64 / 3.0 + LN_EPS).sqrt();
        let v = g.value(y).data();
        assert!((v[0] + expected).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - expected).abs() < 1e-12);
        assert!((expected - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_constant_gives_beta() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 3], 4.0));
        let gamma = g.constant(Tensor::full(&[3], 2.0));
        let beta = g.constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let (y, _) = norm_layer(&mut g, x, gamma, beta, &NormMode::Layer).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn batch_norm_masked_statistics() {
        let mut g = Graph::new();
        // second step of sample 0 is padding with a large value
        let x = g.constant(Tensor::new(vec![2, 2, 1], vec![1.0, 1000.0, 2.0, 3.0]).unwrap());
        let mask = g.constant(Tensor::new(vec![2, 2, 1], vec![1.0, 0.0, 1.0, 1.0]).unwrap());
        let gamma = g.constant(Tensor::full(&[1], 1.0));
        let beta = g.constant(Tensor::zeros(&[1]));
        let (y, stats) = norm_layer(&mut g, x, gamma, beta, &NormMode::BatchTrain { mask, count: 3 }).unwrap();
        let (mean, var) = stats.unwrap();
        assert!((mean[0] - 2.0).abs() < 1e-12);
        assert!((var[0] - 2.0 / 3.0).abs() < 1e-12);
        let v = g.value(y).data();
        assert!((v[0] + v[2] + v[3]).abs() < 1e-9);
    }

    #[test]
    fn attention_picks_matching_key() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 1, 2], vec![50.0, 0.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 2, 2], vec![7.0, 8.0, -1.0, 3.0]).unwrap());
        let (out, w) = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        // softmax over {50/√2, 0}
        let a = 1.0 / (1.0 + (-50.0 / 2f64.sqrt()).exp());
        let wv = g.value(w).data();
        assert!((wv[0] - a).abs() < 1e-14);
        let o = g.value(out).data();
        assert!((o[0] - (7.0 * a - (1.0 - a))).abs() < 1e-12);
        assert!((o[1] - 7.9999999).abs() < 1e-6);
    }

    #[test]
    fn identical_keys_average_unmasked_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 1, 1], vec![0.3]).unwrap());
        let k = g.constant(Tensor::full(&[1, 3, 1], 2.0));
        let v = g.constant(Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 100.0]).unwrap());
        let mask = g.constant(additive_key_mask(&[&[1, 1, 0]]).unwrap());
        let (out, w) = scaled_dot_attention(&mut g, q, k, v, Some(mask)).unwrap();
        assert!((g.value(out).data()[0] - 1.5).abs() < 1e-12);
        assert!(g.value(w).data()[2] < 1e-30);
        assert!(matches!(additive_key_mask(&[&[0, 0]]), Err(ModelError::AllMasked)));
    }

    #[test]
    fn block_with_zero_sublayers_is_layer_norm() {
        let mut c = ModelConfig::new(4, 3, Hyperparams::default());
        c.d_model = 4;
        c.dropout_rate = 0.0;
        let mut p = ModelParams::init(&c, 1).unwrap();
        for e in p.entries_mut() {
            if e.name.starts_with("block0.attn") || e.name.starts_with("block0.ffw") {
                e.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &p);
        let xs = vec![1.0, 2.0, 3.0, 4.0, 0.0, -1.0, 5.0, 2.0, 3.0, 3.0, 3.0, 1.0];
        let x = g.constant(Tensor::new(vec![1, 3, 4], xs.clone()).unwrap());
        let obs = g.constant(Tensor::full(&[1, 3, 1], 1.0));
        let (y, _, _) = encoder_block(&mut g, &c, &p, &vars, 0, x, None, obs, None).unwrap();
        let ln = |row: &[f64]| -> Vec<f64> {
            let m = row.iter().sum::<f64>() / 4.0;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            row.iter().map(|a| (a - m) / (v + LN_EPS).sqrt()).collect()
        };
        // both sublayers are zero, so each Add & Norm reduces to a layer norm
        for (row, out) in xs.chunks(4).zip(g.value(y).data().chunks(4)) {
            let expected = ln(&ln(row));
            for (e, o) in expected.iter().zip(out) {
                assert!((e - o).abs() < 1e-12);
            }
            let once = ln(row);
            assert!(once.iter().zip(out).all(|(a, b)| (a - b).abs() < 1e-4));
        }
    }

    #[test]
    fn padding_rows_do_not_matter() {
        let mut c = ModelConfig::new(2, 4, Hyperparams::default());
        c.norm_kind = NormKind::Batch;
        let m = RulModel::new(c, 5).unwrap();
        let a = sample(&[&[0.1, 0.2], &[0.3, -0.4], &[0.0, 0.0], &[0.0, 0.0]], &[1, 1, 0, 0]);
        let mut b = a.clone();
        b.features[4..].copy_from_slice(&[9.0, -9.0, 3.0, 4.0]);
        let pa = forward(&m.config, &m.params, &a).unwrap();
        let pb = forward(&m.config, &m.params, &b).unwrap();
        assert_eq!(pa, pb);
        let batch = m.predict_scaled(&[a.clone(), b, a]).unwrap();
        assert!(batch.iter().all(|&p| p == pa));
    }

    #[test]
    fn empty_mask_rejected() {
        let m = RulModel::new(ModelConfig::new(1, 2, Hyperparams::default()), 0).unwrap();
        let s = sample(&[&[0.0], &[0.0]], &[0, 0]);
        assert!(matches!(forward(&m.config, &m.params, &s), Err(ModelError::EmptyMask { .. })));
        let s = sample(&[&[0.0], &[0.0], &[0.0]], &[1, 1, 1]);
        assert!(matches!(forward(&m.config, &m.params, &s), Err(ModelError::SampleShape { .. })));
    }
}
