//! Mini-batch training with a unit-level validation split, early stopping and
//! random or grid hyperparameter search.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Graph, NumericsError, Tensor, Var};
use crate::seed::{derive_seed, rng_for};
use crate::transformer::{
    bind_params, forward_batch, Hyperparams, InputTransform, ModelConfig, ModelError, ModelParams, RulModel,
};
use crate::windowing::WindowedSample;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("a unit-level split needs at least 2 units, found {found}")]
    TooFewUnits { found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{predictions} predictions for {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("search space has no valid configuration")]
    EmptySpace,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 100,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            patience: 10,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Units on each side of a train/validation split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSplit {
    pub train_units: Vec<u32>,
    pub val_units: Vec<u32>,
}

impl UnitSplit {
    /// Shuffle the distinct unit ids of `samples` and hold out
    /// `round(n * val_fraction)` of them (at least one on each side).
    pub fn new(samples: &[WindowedSample], val_fraction: f64, seed: u64) -> Result<Self, TrainError> {
        let units: Vec<u32> = samples.iter().map(|s| s.unit_id).collect();
        Self::from_units(&units, val_fraction, seed)
    }

    /// Split a list of unit ids; duplicates are ignored.
    pub fn from_units(units: &[u32], val_fraction: f64, seed: u64) -> Result<Self, TrainError> {
        let units: BTreeSet<u32> = units.iter().copied().collect();
        let mut units: Vec<u32> = units.into_iter().collect();
        if units.len() < 2 {
            return Err(TrainError::TooFewUnits { found: units.len() });
        }
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(TrainError::Config("val_fraction must lie in (0, 1)".into()));
        }
        let n = units.len();
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        units.shuffle(&mut rng_for(seed, "train/split", 0));
        let mut val_units = units[..n_val].to_vec();
        let mut train_units = units[n_val..].to_vec();
        val_units.sort_unstable();
        train_units.sort_unstable();
        Ok(Self { train_units, val_units })
    }

    /// Partition `samples` preserving their order.
    pub fn partition<'a>(&self, samples: &'a [WindowedSample]) -> (Vec<&'a WindowedSample>, Vec<&'a WindowedSample>) {
        let val: BTreeSet<u32> = self.val_units.iter().copied().collect();
        samples.iter().partition(|s| !val.contains(&s.unit_id))
    }
}

/// Split by unit so that every window of a unit lands on one side.
pub fn split_train_val(
    samples: &[WindowedSample],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<&WindowedSample>, Vec<&WindowedSample>), TrainError> {
    Ok(UnitSplit::new(samples, val_fraction, seed)?.partition(samples))
}

/// Mean squared error.
pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if predictions.len() != targets.len() {
        return Err(TrainError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Recorded MSE between `[B,1]` predictions and `targets`.
pub fn mse_loss(g: &mut Graph, predictions: Var, targets: &[f64]) -> Result<Var, TrainError> {
    if targets.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = g.value(predictions).numel();
    if n != targets.len() {
        return Err(TrainError::LengthMismatch {
            predictions: n,
            targets: targets.len(),
        });
    }
    let shape = g.shape(predictions).to_vec();
    let t = g.constant(Tensor::new(shape, targets.to_vec())?);
    let diff = g.sub(predictions, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}

/// Per-parameter optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One update of every trainable tensor. `grads` is aligned with
/// `params.entries()`; `None` means a zero gradient.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &[Option<&[f64]>],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    for (e, g) in params.entries().iter().zip(grads) {
        if let Some(g) = g {
            if e.trainable && g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient { param: e.name.clone() });
            }
        }
    }
    state.step += 1;
    let lr = config.learning_rate;
    let t = state.step as i32;
    for (i, e) in params.entries_mut().iter_mut().enumerate() {
        if !e.trainable {
            continue;
        }
        let grad = grads.get(i).copied().flatten();
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        let data = e.tensor.data_mut();
        match config.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for j in 0..data.len() {
                    let gj = grad.map_or(0.0, |g| g[j]);
                    m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                    data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                }
            }
            Optimizer::Sgd { momentum } => {
                for j in 0..data.len() {
                    let gj = grad.map_or(0.0, |g| g[j]);
                    m[j] = momentum * m[j] + gj;
                    data[j] -= lr * m[j];
                }
            }
        }
    }
    Ok(())
}

/// Loss history and outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub train_units: Vec<u32>,
    pub val_units: Vec<u32>,
    pub n_train_samples: usize,
    pub n_val_samples: usize,
    pub model: ModelConfig,
    pub train_config: TrainConfig,
    pub checkpoint: Option<String>,
    /// Not serialized, so that reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Two-column `epoch,loss` CSV with 1-based epochs.
pub fn write_loss_csv<W: Write>(losses: &[f64], mut sink: W) -> io::Result<()> {
    writeln!(sink, "epoch,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(sink, "{},{}", i + 1, l)?;
    }
    sink.flush()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: RulModel,
    pub report: TrainReport,
}

fn targets_of(samples: &[&WindowedSample]) -> Vec<f64> {
    samples.iter().map(|s| s.target_scaled).collect()
}

/// Validation MSE in eval mode.
pub fn evaluate_loss(model: &RulModel, samples: &[&WindowedSample]) -> Result<f64, TrainError> {
    let preds = model.predict_batch(samples)?;
    mse(&preds, &targets_of(samples))
}

/// Shuffle, then group windows of similar length into batches and shuffle
/// the batch order. Keeps padding per batch small for expanding windows.
fn epoch_batches(samples: &[&WindowedSample], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, "train/shuffle", epoch as u64);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let bucket = batch_size * 8;
    let mut batches = Vec::new();
    for chunk in order.chunks_mut(bucket) {
        chunk.sort_by_key(|&i| samples[i].last_unmasked());
        batches.extend(chunk.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

/// Train on an explicit split. `on_epoch` sees every finished epoch.
pub fn train_on_split(
    train: &[&WindowedSample],
    val: &[&WindowedSample],
    model_config: &ModelConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let started = Instant::now();
    let mut model = RulModel::new(model_config.clone(), derive_seed(config.seed, "train/init", 0))?;
    let mut state = OptimizerState::new(&model.params);
    let mut dropout_rng = rng_for(config.seed, "train/dropout", 0);

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        train_units: train.iter().map(|s| s.unit_id).collect::<BTreeSet<_>>().into_iter().collect(),
        val_units: val.iter().map(|s| s.unit_id).collect::<BTreeSet<_>>().into_iter().collect(),
        n_train_samples: train.len(),
        n_val_samples: val.len(),
        model: model_config.clone(),
        train_config: config.clone(),
        checkpoint: None,
        wall_seconds: 0.0,
    };
    let mut best = model.params.clone();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for idx in epoch_batches(train, config.batch_size, config.seed, epoch) {
            let batch: Vec<&WindowedSample> = idx.iter().map(|&i| train[i]).collect();
            let mut g = Graph::new();
            let vars = bind_params(&mut g, &model.params);
            let pass = forward_batch(
                &mut g,
                &model.config,
                &model.params,
                &vars,
                &batch,
                Some(&mut dropout_rng),
            )?;
            let loss = mse_loss(&mut g, pass.prediction, &targets_of(&batch))?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            total += value * batch.len() as f64;
            g.backward(loss)?;
            let grads: Vec<Option<&[f64]>> = vars.iter().map(|&v| g.grad(v)).collect();
            optimizer_step(&mut model.params, &grads, &mut state, config)?;
            for update in &pass.batch_stats {
                update.apply(&mut model.params);
            }
        }
        let train_loss = total / train.len() as f64;
        let val_loss = evaluate_loss(&model, val)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        on_epoch(&EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best.clone_from(&model.params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    model.params = best;
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, report })
}

/// Split by unit with `config.seed`, then train.
pub fn train(
    samples: &[WindowedSample],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let (tr, va) = split_train_val(samples, config.val_fraction, config.seed)?;
    train_on_split(&tr, &va, model_config, config, &mut |_| {})
}

/// Inclusive integer range walked in `step` increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

impl IntRange {
    pub fn values(&self) -> Vec<usize> {
        if self.step == 0 || self.min > self.max {
            return Vec::new();
        }
        (self.min..=self.max).step_by(self.step).collect()
    }
}

/// Inclusive real range walked in `step` increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloatRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl FloatRange {
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.min > self.max {
            return Vec::new();
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub d_model: IntRange,
    pub n_heads: IntRange,
    pub n_blocks: IntRange,
    pub dim_ffw: IntRange,
    pub dropout_rate: FloatRange,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            d_model: IntRange { min: 20, max: 30, step: 2 },
            n_heads: IntRange { min: 1, max: 4, step: 1 },
            n_blocks: IntRange { min: 1, max: 3, step: 1 },
            dim_ffw: IntRange { min: 10, max: 14, step: 1 },
            dropout_rate: FloatRange {
                min: 0.3,
                max: 0.7,
                step: 0.1,
            },
        }
    }
}

impl SearchSpace {
    /// Every combination with `d_model` divisible by `n_heads`, in
    /// lexicographic order.
    pub fn grid(&self) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for d_model in self.d_model.values() {
            for n_heads in self.n_heads.values() {
                if n_heads == 0 || d_model % n_heads != 0 {
                    continue;
                }
                for n_blocks in self.n_blocks.values() {
                    for dim_ffw in self.dim_ffw.values() {
                        for dropout_rate in self.dropout_rate.values() {
                            out.push(Hyperparams {
                                d_model,
                                n_heads,
                                n_blocks,
                                dim_ffw,
                                dropout_rate,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn contains(&self, hp: &Hyperparams) -> bool {
        self.grid().contains(hp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum SearchStrategy {
    /// `n` distinct grid points drawn at random.
    Random(usize),
    Grid,
}

/// Candidates for `strategy`, deterministic in `seed`.
pub fn candidates(space: &SearchSpace, strategy: SearchStrategy, seed: u64) -> Result<Vec<Hyperparams>, TrainError> {
    let mut grid = space.grid();
    if grid.is_empty() {
        return Err(TrainError::EmptySpace);
    }
    if let SearchStrategy::Random(n) = strategy {
        grid.shuffle(&mut rng_for(seed, "search/random", 0));
        grid.truncate(n);
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hyperparams: Hyperparams,
    pub best_val_loss: f64,
    pub best_epoch: usize,
}

/// `base` with the searched hyperparameters applied. A convolutional input
/// keeps its kernel and takes `d_model` output channels.
pub fn apply_hyperparams(base: &ModelConfig, hp: &Hyperparams) -> ModelConfig {
    let mut c = base.clone();
    c.d_model = hp.d_model;
    c.n_heads = hp.n_heads;
    c.n_blocks = hp.n_blocks;
    c.dim_ffw = hp.dim_ffw;
    c.dropout_rate = hp.dropout_rate;
    if let InputTransform::Conv1d { kernel, .. } = c.input_transform {
        c.input_transform = InputTransform::Conv1d {
            kernel,
            n_kernels: hp.d_model,
        };
    }
    c
}

/// Train each candidate for `epoch_budget` epochs on the same split and rank
/// by best validation loss (ties keep candidate order).
pub fn hyperparameter_search(
    train: &[&WindowedSample],
    val: &[&WindowedSample],
    base: &ModelConfig,
    space: &SearchSpace,
    strategy: SearchStrategy,
    config: &TrainConfig,
    epoch_budget: usize,
) -> Result<Vec<SearchResult>, TrainError> {
    let mut results = Vec::new();
    for (i, hp) in candidates(space, strategy, config.seed)?.into_iter().enumerate() {
        let model_config = apply_hyperparams(base, &hp);
        model_config.validate()?;
        let cfg = TrainConfig {
            max_epochs: epoch_budget,
            seed: derive_seed(config.seed, "search/candidate", i as u64),
            ..config.clone()
        };
        let outcome = train_on_split(train, val, &model_config, &cfg, &mut |_| {})?;
        results.push(SearchResult {
            hyperparams: hp,
            best_val_loss: outcome.report.best_val_loss,
            best_epoch: outcome.report.best_epoch,
        });
    }
    results.sort_by(|a, b| a.best_val_loss.total_cmp(&b.best_val_loss));
    Ok(results)
}
