//! The `rulformer` command line.
//!
//! ```text
//! rulformer synth      --out DIR [--units N --life-min A --life-max B --regimes K --noise S]
//! rulformer prepare    --train FILE --out DIR [--window sliding|expanding --window-size T]
//! rulformer train      --train FILE --out DIR [--dataset FD00x] [model and optimizer overrides]
//! rulformer evaluate   --model-dir DIR --test FILE --truth FILE --out DIR
//! rulformer experiment --train FILE --out DIR --axis window_mode|norm_kind|pos_encoding|input_transform
//! ```
//!
//! Every subcommand accepts `--config FILE` (TOML, see [`RunConfig`]); flags
//! override config fields. Exit codes: 0 success, 1 runtime failure, 2 usage
//! or configuration error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmapss::{
    generate_synthetic, load_rul_truth, load_trajectories, write_rul_truth, write_trajectories, Dataset, DatasetKind,
    SyntheticSpec, Trajectory,
};
use crate::evaluation::{evaluate, EvalOptions, EvalReport};
use crate::regimes::{fit_regime_model, RegimeModel, RegimeOptions, DEFAULT_SENSORS};
use crate::seed::{derive_seed, rng_for};
use crate::training::{train_on_split, write_loss_csv, TrainConfig, TrainOutcome, UnitSplit};
use crate::transformer::{
    Hyperparams, InputTransform, ModelConfig, NormKind, Pooling, PositionalEncoding, RulModel,
};
use crate::windowing::{
    build_training_set, read_samples, write_samples, RulPolicy, SampleSetMeta, TrainingSet, WindowMode, WindowSpec,
    WindowedSample,
};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const CONV_KERNEL: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSection {
    pub k: Option<usize>,
    pub k_max: usize,
    pub sensors: Vec<usize>,
}

impl Default for RegimeSection {
    fn default() -> Self {
        Self {
            k: None,
            k_max: 8,
            sensors: DEFAULT_SENSORS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Sliding,
    Expanding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub mode: WindowKind,
    /// Sliding window length.
    pub size: usize,
    pub min_len: usize,
    pub step: usize,
    pub rul_early: u32,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            mode: WindowKind::Expanding,
            size: WindowMode::DEFAULT_SLIDING,
            min_len: 5,
            step: 1,
            rul_early: 125,
        }
    }
}

impl WindowSection {
    pub fn mode(&self) -> WindowMode {
        match self.mode {
            WindowKind::Sliding => WindowMode::Sliding { size: self.size },
            WindowKind::Expanding => WindowMode::Expanding {
                min_len: self.min_len,
                step: self.step,
            },
        }
    }

    pub fn policy(&self) -> RulPolicy {
        RulPolicy {
            rul_early: self.rul_early,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    None,
    Linear,
    Conv1d,
}

/// Architecture overrides; unset fields come from the dataset preset or the
/// default hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_blocks: Option<usize>,
    pub dim_ffw: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub input_transform: Option<TransformKind>,
    pub conv_kernel: Option<usize>,
    pub positional_encoding: Option<PositionalEncoding>,
    pub norm_kind: Option<NormKind>,
    pub pooling: Option<Pooling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub replications: usize,
    /// Cut points per held-out unit when no test file is given.
    pub cuts_per_unit: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            replications: 3,
            cuts_per_unit: 5,
        }
    }
}

/// Everything a run needs, loadable from one TOML document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Benchmark subset name selecting tuned hyperparameters (`FD001`..`FD004`).
    pub dataset: Option<String>,
    pub paths: Paths,
    pub synth: SyntheticSpec,
    pub regimes: RegimeSection,
    pub window: WindowSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let mut hp = self
            .dataset
            .as_deref()
            .and_then(Hyperparams::for_dataset)
            .unwrap_or_default();
        let m = &self.model;
        hp.d_model = m.d_model.unwrap_or(hp.d_model);
        hp.n_heads = m.n_heads.unwrap_or(hp.n_heads);
        hp.n_blocks = m.n_blocks.unwrap_or(hp.n_blocks);
        hp.dim_ffw = m.dim_ffw.unwrap_or(hp.dim_ffw);
        hp.dropout_rate = m.dropout_rate.unwrap_or(hp.dropout_rate);
        hp
    }

    /// Resolve the model for windows of `max_len × d_features`. Without an
    /// input transform the model width is the feature count.
    pub fn model_config(&self, d_features: usize, max_len: usize) -> ModelConfig {
        let mut c = ModelConfig::new(d_features, max_len, self.hyperparams());
        let m = &self.model;
        c.input_transform = match m.input_transform.unwrap_or(TransformKind::Linear) {
            TransformKind::None => {
                c.d_model = d_features;
                InputTransform::None
            }
            TransformKind::Linear => InputTransform::Linear,
            TransformKind::Conv1d => InputTransform::Conv1d {
                kernel: m.conv_kernel.unwrap_or(CONV_KERNEL),
                n_kernels: c.d_model,
            },
        };
        c.positional_encoding = m.positional_encoding.unwrap_or(c.positional_encoding);
        c.norm_kind = m.norm_kind.unwrap_or(c.norm_kind);
        c.pooling = m.pooling.unwrap_or(c.pooling);
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train", 0),
            ..self.train.clone()
        }
    }

    pub fn regime_options(&self) -> RegimeOptions {
        RegimeOptions {
            k: self.regimes.k,
            k_max: self.regimes.k_max,
            sensors: self.regimes.sensors.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    Layer,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PosArg {
    Fixed,
    Learnable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolArg {
    Last,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    WindowMode,
    NormKind,
    PosEncoding,
    InputTransform,
}

#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark subset (FD001..FD004) selecting tuned hyperparameters.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    window: Option<WindowKind>,
    #[arg(long)]
    window_size: Option<usize>,
    /// Training trajectories (26-column text).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test trajectories (26-column text).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Ground-truth RUL file for the test trajectories.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Number of operating regimes; chosen automatically when absent.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    dim_ffw: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long, value_enum)]
    pos_encoding: Option<PosArg>,
    #[arg(long, value_enum)]
    input_transform: Option<TransformKind>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long, value_enum)]
    pooling: Option<PoolArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Score against the raw ground truth instead of clipping it at 125.
    #[arg(long)]
    no_clip_truth: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Parser)]
#[command(name = "rulformer", version, about = "Remaining-useful-life prediction with an encoder transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic run-to-failure fleet.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        life_min: Option<u32>,
        #[arg(long)]
        life_max: Option<u32>,
        #[arg(long)]
        regimes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit regimes and write the windowed training set.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write its checkpoint and report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `prepare`; replaces `--train`.
        #[arg(long)]
        prepared: Option<PathBuf>,
    },
    /// Score a trained model on a test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train`.
        #[arg(long)]
        model_dir: PathBuf,
        /// Checkpoint to use instead of `<model-dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare the variants of one design axis.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        replications: Option<usize>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.to_string();
    move |source| CliError::Runtime(Error::Io { context, source })
}

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &common.dataset {
        if Hyperparams::for_dataset(d).is_none() {
            return Err(usage(format!("unknown dataset {d:?}; expected FD001..FD004")));
        }
        cfg.dataset = Some(d.clone());
    }
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v.into();
            }
        };
    }
    set!(common.seed => cfg.seed);
    set!(common.out => cfg.paths.out);
    set!(common.train => cfg.paths.train);
    set!(common.test => cfg.paths.test);
    set!(common.truth => cfg.paths.truth);
    set!(common.window => cfg.window.mode);
    set!(common.window_size => cfg.window.size);
    set!(common.k => cfg.regimes.k);
    set!(common.d_model => cfg.model.d_model);
    set!(common.heads => cfg.model.n_heads);
    set!(common.blocks => cfg.model.n_blocks);
    set!(common.dim_ffw => cfg.model.dim_ffw);
    set!(common.dropout => cfg.model.dropout_rate);
    set!(common.input_transform => cfg.model.input_transform);
    set!(common.kernel => cfg.model.conv_kernel);
    set!(common.epochs => cfg.train.max_epochs);
    set!(common.batch_size => cfg.train.batch_size);
    set!(common.lr => cfg.train.learning_rate);
    set!(common.patience => cfg.train.patience);
    if let Some(n) = common.norm {
        cfg.model.norm_kind = Some(match n {
            NormArg::Layer => NormKind::Layer,
            NormArg::Batch => NormKind::Batch,
        });
    }
    if let Some(p) = common.pos_encoding {
        cfg.model.positional_encoding = Some(match p {
            PosArg::Fixed => PositionalEncoding::FixedSinusoidal,
            PosArg::Learnable => PositionalEncoding::Learnable,
        });
    }
    if let Some(p) = common.pooling {
        cfg.model.pooling = Some(match p {
            PoolArg::Last => Pooling::LastUnmasked,
            PoolArg::Mean => Pooling::MeanUnmasked,
        });
    }
    if common.no_clip_truth {
        cfg.eval.clip_truth = false;
    }
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn input_path(p: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    let p = p.clone().ok_or_else(|| usage(format!("missing --{flag}")))?;
    if !p.exists() {
        return Err(usage(format!("input path does not exist: {}", p.display())));
    }
    Ok(p)
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.paths.out.clone().ok_or_else(|| usage("missing --out"))?;
    fs::create_dir_all(&dir).map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(io_err(path.display()))
}

fn with_writer(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(io_err(path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path.display()))
}

fn load_test(cfg: &RunConfig) -> CliResult<Dataset> {
    let test = input_path(&cfg.paths.test, "test")?;
    let truth = input_path(&cfg.paths.truth, "truth")?;
    let ds = load_trajectories(&test, DatasetKind::Test)?;
    Ok(load_rul_truth(&truth, ds)?)
}

/// Window spec and target policy stored next to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBundle {
    pub spec: WindowSpec,
    pub policy: RulPolicy,
    pub sensors: Vec<usize>,
}

fn cmd_synth(
    common: &Common,
    units: Option<usize>,
    life: (Option<u32>, Option<u32>),
    regimes: Option<usize>,
    noise: Option<f64>,
) -> CliResult<()> {
    let cfg = resolve(common)?;
    let out = out_dir(&cfg)?;
    let mut spec = cfg.synth.clone();
    spec.seed = cfg.seed;
    spec.n_units = units.unwrap_or(spec.n_units);
    spec.life_range = (life.0.unwrap_or(spec.life_range.0), life.1.unwrap_or(spec.life_range.1));
    spec.n_regimes = regimes.unwrap_or(spec.n_regimes);
    spec.noise_std = noise.unwrap_or(spec.noise_std);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let (train, test) = generate_synthetic(&spec)?;
    with_writer(&out.join("train.txt"), |w| write_trajectories(&train, w))?;
    with_writer(&out.join("test.txt"), |w| write_trajectories(&test, w))?;
    with_writer(&out.join("truth.txt"), |w| write_rul_truth(&test, w))?;
    println!(
        "synthetic fleet: {} train units ({} rows), {} test units",
        train.len(),
        train.total_rows(),
        test.len()
    );
    Ok(())
}

fn prepare(cfg: &RunConfig, train: &Dataset) -> CliResult<(RegimeModel, TrainingSet, Vec<usize>)> {
    let regime = fit_regime_model(train, &cfg.regime_options(), derive_seed(cfg.seed, "regimes", 0))?;
    let normalized = regime.normalize(train);
    let set = build_training_set(&normalized, cfg.window.mode(), &cfg.window.policy())?;
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    Ok((regime, set, normalized.sensors))
}

fn cmd_prepare(common: &Common) -> CliResult<()> {
    let cfg = resolve(common)?;
    let path = input_path(&cfg.paths.train, "train")?;
    let out = out_dir(&cfg)?;
    let train = load_trajectories(&path, DatasetKind::Train)?;
    let (regime, set, sensors) = prepare(&cfg, &train)?;
    write_file(&out.join("regime.json"), regime.to_json())?;
    let d = sensors.len();
    with_writer(&out.join("samples.bin"), |w| {
        write_samples(&set.samples, set.spec.pad_to, d, w).map_err(std::io::Error::other)
    })?;
    let meta = SampleSetMeta {
        spec: set.spec,
        policy: set.policy,
        count: set.samples.len(),
        d_features: d,
        sensors,
        warnings: set.warnings.clone(),
    };
    write_file(&out.join("samples.json"), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    println!(
        "regimes {} samples {} pad_to {} d_features {}",
        regime.k,
        set.samples.len(),
        set.spec.pad_to,
        d
    );
    Ok(())
}

fn progress(quiet: bool) -> impl FnMut(&crate::training::EpochRecord) {
    move |r| {
        if !quiet {
            eprintln!("epoch {:>4}  train {:.6}  val {:.6}", r.epoch, r.train_loss, r.val_loss);
        }
    }
}

fn write_training_outputs(out: &Path, outcome: &TrainOutcome) -> CliResult<()> {
    outcome.model.save(out.join("model.ckpt"))?;
    let mut report = outcome.report.clone();
    report.checkpoint = Some("model.ckpt".into());
    write_file(&out.join("train_report.json"), report.to_json())?;
    with_writer(&out.join("train_loss.csv"), |w| write_loss_csv(&report.train_loss, w))?;
    with_writer(&out.join("val_loss.csv"), |w| write_loss_csv(&report.val_loss, w))?;
    Ok(())
}

fn cmd_train(common: &Common, prepared: &Option<PathBuf>) -> CliResult<()> {
    let cfg = resolve(common)?;
    let (regime, samples, spec, policy, sensors) = match prepared {
        Some(dir) => {
            if !dir.exists() {
                return Err(usage(format!("input path does not exist: {}", dir.display())));
            }
            let regime = RegimeModel::load(dir.join("regime.json"))?;
            let meta_path = dir.join("samples.json");
            let meta_text = fs::read_to_string(&meta_path).map_err(io_err(meta_path.display()))?;
            let meta: SampleSetMeta = serde_json::from_str(&meta_text)
                .map_err(|e| usage(format!("invalid {}: {e}", meta_path.display())))?;
            let bin = dir.join("samples.bin");
            let file = File::open(&bin).map_err(io_err(bin.display()))?;
            let samples = read_samples(std::io::BufReader::new(file))?;
            (regime, samples, meta.spec, meta.policy, meta.sensors)
        }
        None => {
            let path = input_path(&cfg.paths.train, "train")?;
            let train = load_trajectories(&path, DatasetKind::Train)?;
            let (regime, set, sensors) = prepare(&cfg, &train)?;
            (regime, set.samples, set.spec, set.policy, sensors)
        }
    };
    let out = out_dir(&cfg)?;
    let model_config = cfg.model_config(sensors.len(), spec.pad_to);
    model_config.validate().map_err(|e| usage(e.to_string()))?;
    let tc = cfg.train_config();
    let split = UnitSplit::new(&samples, tc.val_fraction, tc.seed)?;
    let (tr, va) = split.partition(&samples);
    let outcome = train_on_split(&tr, &va, &model_config, &tc, &mut progress(common.quiet))?;
    regime.save(out.join("regime.json"))?;
    let bundle = WindowBundle { spec, policy, sensors };
    write_file(&out.join("window.json"), serde_json::to_string_pretty(&bundle).expect("bundle serializes"))?;
    write_training_outputs(&out, &outcome)?;
    println!(
        "best epoch {} of {}  val loss {:.6}  val rmse {:.3} cycles",
        outcome.report.best_epoch,
        outcome.report.val_loss.len(),
        outcome.report.best_val_loss,
        outcome.report.best_val_loss.sqrt() * (policy.y_max() - policy.y_min())
    );
    Ok(())
}

fn write_eval_outputs(out: &Path, report: &EvalReport) -> CliResult<()> {
    write_file(&out.join("eval_report.json"), report.to_json())?;
    with_writer(&out.join("predictions.csv"), |w| report.write_predictions_csv(w))?;
    with_writer(&out.join("metrics.csv"), |w| report.write_metrics_csv(w))
}

fn cmd_evaluate(common: &Common, model_dir: &Path, checkpoint: &Option<PathBuf>) -> CliResult<()> {
    let cfg = resolve(common)?;
    if !model_dir.exists() {
        return Err(usage(format!("input path does not exist: {}", model_dir.display())));
    }
    let ckpt = checkpoint.clone().unwrap_or_else(|| model_dir.join("model.ckpt"));
    if !ckpt.exists() {
        return Err(usage(format!("input path does not exist: {}", ckpt.display())));
    }
    let test = load_test(&cfg)?;
    let out = out_dir(&cfg)?;
    let model = RulModel::load(&ckpt)?;
    let regime = RegimeModel::load(model_dir.join("regime.json"))?;
    let bundle_path = model_dir.join("window.json");
    let text = fs::read_to_string(&bundle_path).map_err(io_err(bundle_path.display()))?;
    let bundle: WindowBundle =
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid {}: {e}", bundle_path.display())))?;
    let report = evaluate(&model, &regime, &bundle.spec, &bundle.policy, &test, &cfg.eval)?;
    write_eval_outputs(&out, &report)?;
    if !report.truncated_units.is_empty() {
        eprintln!(
            "warning: {} test histories were cut to the last {} cycles",
            report.truncated_units.len(),
            bundle.spec.pad_to
        );
    }
    println!(
        "units {}  rmse {:.4}  score {:.4}",
        report.n_units, report.rmse, report.score
    );
    Ok(())
}

/// `(worse - better) / better × 100` for two values of a lower-is-better
/// metric.
pub fn percentage_improvement(a: f64, b: f64) -> f64 {
    let (better, worse) = if a <= b { (a, b) } else { (b, a) };
    (worse - better) / better * 100.0
}

/// Held-out units cut at random points, scored like a test set. Cut `j` of a
/// unit of length `L` keeps a uniform number of cycles in `[min(5, L), L]`.
pub fn holdout_test_set(train: &Dataset, units: &[u32], cuts_per_unit: usize, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, "experiment/cuts", 0);
    let mut trajectories = Vec::new();
    let mut truths = std::collections::BTreeMap::new();
    let mut next_id = 1u32;
    for &u in units {
        let Some(t) = train.unit(u) else { continue };
        let l = t.len();
        for _ in 0..cuts_per_unit {
            let keep = rng.gen_range(l.min(5)..=l);
            let mut cut: Trajectory = t.truncated(keep);
            cut.unit_id = next_id;
            truths.insert(next_id, (l - keep) as u32);
            trajectories.push(cut);
            next_id += 1;
        }
    }
    let mut ds = Dataset::new(DatasetKind::Test, trajectories);
    ds.true_test_ruls = Some(truths);
    ds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub rmse: Vec<f64>,
    pub score: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Comparison table: one row per variant with mean RMSE and score (sample
/// std and per-replication values when replicated), then a row with the
/// percentage improvement of the best over the worst variant.
pub fn comparison_csv(results: &[VariantResult]) -> String {
    let reps = results.first().map_or(0, |r| r.rmse.len());
    let mut header = vec!["variant".to_owned(), "rmse".into(), "score".into()];
    if reps > 1 {
        header.extend(["rmse_std".into(), "score_std".into()]);
    }
    for r in 1..=reps {
        header.push(format!("rmse_rep{r}"));
    }
    for r in 1..=reps {
        header.push(format!("score_rep{r}"));
    }
    let mut out = header.join(",") + "\n";
    for v in results {
        let mut row = vec![v.variant.clone(), mean(&v.rmse).to_string(), mean(&v.score).to_string()];
        if reps > 1 {
            row.push(sample_std(&v.rmse).to_string());
            row.push(sample_std(&v.score).to_string());
        }
        row.extend(v.rmse.iter().map(f64::to_string));
        row.extend(v.score.iter().map(f64::to_string));
        out += &(row.join(",") + "\n");
    }
    let spread = |f: &dyn Fn(&VariantResult) -> f64| {
        let vals: Vec<f64> = results.iter().map(f).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        percentage_improvement(lo, hi)
    };
    let mut row = vec![
        "improvement_pct".to_owned(),
        spread(&|v| mean(&v.rmse)).to_string(),
        spread(&|v| mean(&v.score)).to_string(),
    ];
    row.resize(header.len(), String::new());
    out += &(row.join(",") + "\n");
    out
}

/// Variants of `axis` as `(name, config)` pairs derived from `base`.
pub fn axis_variants(axis: Axis, base: &RunConfig) -> Vec<(String, RunConfig)> {
    let with = |name: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (name.to_owned(), c)
    };
    match axis {
        Axis::WindowMode => vec![
            with("sliding", &|c| c.window.mode = WindowKind::Sliding),
            with("expanding", &|c| c.window.mode = WindowKind::Expanding),
        ],
        Axis::NormKind => vec![
            with("layer", &|c| c.model.norm_kind = Some(NormKind::Layer)),
            with("batch", &|c| c.model.norm_kind = Some(NormKind::Batch)),
        ],
        Axis::PosEncoding => vec![
            with("fixed", &|c| c.model.positional_encoding = Some(PositionalEncoding::FixedSinusoidal)),
            with("learnable", &|c| c.model.positional_encoding = Some(PositionalEncoding::Learnable)),
        ],
        Axis::InputTransform => vec![
            with("none", &|c| c.model.input_transform = Some(TransformKind::None)),
            with("linear", &|c| c.model.input_transform = Some(TransformKind::Linear)),
            with("conv1d", &|c| c.model.input_transform = Some(TransformKind::Conv1d)),
        ],
    }
}

/// Train every variant of `axis` `replications` times on one unit split and
/// score each run on `test` (or on cut held-out units when `test` is
/// `None`).
pub fn run_experiment(
    cfg: &RunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    axis: Axis,
    replications: usize,
    on_epoch: &mut dyn FnMut(&str, usize, &crate::training::EpochRecord),
) -> Result<Vec<VariantResult>, Error> {
    let regime = fit_regime_model(train, &cfg.regime_options(), derive_seed(cfg.seed, "regimes", 0))?;
    let normalized = regime.normalize(train);
    let split = UnitSplit::from_units(&train.unit_ids(), cfg.train.val_fraction, derive_seed(cfg.seed, "train", 0))?;
    let holdout;
    let test = match test {
        Some(t) => t,
        None => {
            holdout = holdout_test_set(
                train,
                &split.val_units,
                cfg.experiment.cuts_per_unit,
                derive_seed(cfg.seed, "experiment", 0),
            );
            &holdout
        }
    };
    let mut results = Vec::new();
    for (name, variant) in axis_variants(axis, cfg) {
        let set = build_training_set(&normalized, variant.window.mode(), &variant.window.policy())?;
        let (tr, va) = split.partition(&set.samples);
        let model_config = variant.model_config(normalized.sensors.len(), set.spec.pad_to);
        model_config.validate()?;
        let mut result = VariantResult {
            variant: name.clone(),
            rmse: Vec::new(),
            score: Vec::new(),
        };
        for rep in 0..replications {
            let tc = TrainConfig {
                seed: derive_seed(cfg.seed, "experiment/replication", rep as u64),
                ..variant.train.clone()
            };
            let tr_refs: Vec<&WindowedSample> = tr.clone();
            let outcome = train_on_split(&tr_refs, &va, &model_config, &tc, &mut |r| on_epoch(&name, rep, r))?;
            let report = evaluate(&outcome.model, &regime, &set.spec, &set.policy, test, &variant.eval)?;
            result.rmse.push(report.rmse);
            result.score.push(report.score);
        }
        results.push(result);
    }
    Ok(results)
}

fn cmd_experiment(common: &Common, axis: Axis, replications: Option<usize>) -> CliResult<()> {
    let mut cfg = resolve(common)?;
    if let Some(r) = replications {
        cfg.experiment.replications = r;
    }
    if cfg.experiment.replications == 0 {
        return Err(usage("replications must be positive"));
    }
    let path = input_path(&cfg.paths.train, "train")?;
    let test = match (&cfg.paths.test, &cfg.paths.truth) {
        (None, None) => None,
        _ => Some(load_test(&cfg)?),
    };
    let out = out_dir(&cfg)?;
    let train = load_trajectories(&path, DatasetKind::Train)?;
    let quiet = common.quiet;
    let results = run_experiment(&cfg, &train, test.as_ref(), axis, cfg.experiment.replications, &mut |v, rep, r| {
        if !quiet {
            eprintln!("{v} rep {} epoch {:>4}  train {:.6}  val {:.6}", rep + 1, r.epoch, r.train_loss, r.val_loss);
        }
    })
    .map_err(CliError::Runtime)?;
    let table = comparison_csv(&results);
    write_file(&out.join("experiment.csv"), &table)?;
    write_file(
        &out.join("experiment.json"),
        serde_json::to_string_pretty(&results).expect("results serialize"),
    )?;
    print!("{table}");
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            common,
            units,
            life_min,
            life_max,
            regimes,
            noise,
        } => cmd_synth(&common, units, (life_min, life_max), regimes, noise),
        Command::Prepare { common } => cmd_prepare(&common),
        Command::Train { common, prepared } => cmd_train(&common, &prepared),
        Command::Evaluate {
            common,
            model_dir,
            checkpoint,
        } => cmd_evaluate(&common, &model_dir, &checkpoint),
        Command::Experiment {
            common,
            axis,
            replications,
        } => cmd_experiment(&common, axis, replications),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_convention() {
        let p = percentage_improvement(661.50, 399.50);
        assert!((p - 65.58).abs() < 0.005);
        assert_eq!(p, percentage_improvement(399.50, 661.50));
    }

    #[test]
    fn dataset_presets_and_overrides() {
        let mut cfg = RunConfig {
            dataset: Some("FD002".into()),
            ..RunConfig::default()
        };
        let hp = cfg.hyperparams();
        assert_eq!((hp.d_model, hp.n_heads, hp.n_blocks, hp.dim_ffw, hp.dropout_rate), (26, 2, 2, 10, 0.4));
        cfg.model.n_blocks = Some(3);
        assert_eq!(cfg.hyperparams().n_blocks, 3);
        let cfg = RunConfig::default();
        assert_eq!(cfg.hyperparams(), Hyperparams::default());
        let mut cfg = RunConfig::default();
        cfg.model.input_transform = Some(TransformKind::None);
        assert_eq!(cfg.model_config(14, 30).d_model, 14);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.paths.train = Some("a.txt".into());
        cfg.model.norm_kind = Some(NormKind::Batch);
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        let partial = RunConfig::from_toml("seed = 7\n[window]\nmode = \"sliding\"\nsize = 20\n").unwrap();
        assert_eq!(partial.window.mode(), WindowMode::sliding(20));
        assert_eq!(partial.train, TrainConfig::default());
    }

    #[test]
    fn table_shape() {
        let results = vec![
            VariantResult {
                variant: "layer".into(),
                rmse: vec![10.0],
                score: vec![399.5],
            },
            VariantResult {
                variant: "batch".into(),
                rmse: vec![12.0],
                score: vec![661.5],
            },
        ];
        let csv = comparison_csv(&results);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "variant,rmse,score,rmse_rep1,score_rep1");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("improvement_pct,20,65.58"));
    }
}
