//! Fixed-shape, masked training and inference samples.
//!
//! Sliding windows have a constant length `T`; expanding windows start at a
//! unit's first cycle and grow by `step` cycles per sample, padded on the
//! right to the longest training trajectory. Targets are the piecewise RUL
//! (true RUL clipped at `rul_early`) at each window's last cycle, scaled to
//! `[0, 1]`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regimes::{NormalizedDataset, NormalizedTrajectory};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window end cycle {end} is after failure cycle {failure}")]
    EndAfterFailure { end: u32, failure: u32 },
    #[error("value {value} is outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("pad_to {pad_to} is shorter than a window of length {len}")]
    PadTooShort { pad_to: usize, len: usize },
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("sample stream: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowMode {
    Sliding { size: usize },
    Expanding { min_len: usize, step: usize },
}

impl WindowMode {
    pub const DEFAULT_SLIDING: usize = 30;

    pub fn expanding() -> Self {
        Self::Expanding { min_len: 5, step: 1 }
    }

    pub fn sliding(size: usize) -> Self {
        Self::Sliding { size }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sliding { .. } => "sliding",
            Self::Expanding { .. } => "expanding",
        }
    }

    fn validate(&self) -> Result<(), WindowError> {
        match *self {
            Self::Sliding { size: 0 } => Err(WindowError::InvalidSpec("window size must be positive".into())),
            Self::Expanding { min_len: 0, .. } => {
                Err(WindowError::InvalidSpec("min_len must be positive".into()))
            }
            Self::Expanding { step: 0, .. } => Err(WindowError::InvalidSpec("step must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub mode: WindowMode,
    pub pad_to: usize,
}

/// Piecewise target policy. Labels are clipped at `rul_early` and scaled by
/// the range `[0, rul_early]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulPolicy {
    pub rul_early: u32,
}

impl Default for RulPolicy {
    fn default() -> Self {
        Self { rul_early: 125 }
    }
}

impl RulPolicy {
    pub fn y_min(&self) -> f64 {
        0.0
    }

    pub fn y_max(&self) -> f64 {
        f64::from(self.rul_early)
    }
}

/// `min(failure - end, rul_early)`.
pub fn piecewise_rul(end_cycle: u32, failure_cycle: u32, policy: &RulPolicy) -> Result<u32, WindowError> {
    if end_cycle > failure_cycle {
        return Err(WindowError::EndAfterFailure {
            end: end_cycle,
            failure: failure_cycle,
        });
    }
    Ok((failure_cycle - end_cycle).min(policy.rul_early))
}

pub fn scale_target(rul: f64, policy: &RulPolicy) -> Result<f64, WindowError> {
    let (lo, hi) = (policy.y_min(), policy.y_max());
    if !(lo..=hi).contains(&rul) {
        return Err(WindowError::OutOfRange { value: rul, lo, hi });
    }
    Ok((rul - lo) / (hi - lo))
}

pub fn unscale_target(y: f64, policy: &RulPolicy) -> Result<f64, WindowError> {
    if !(0.0..=1.0).contains(&y) {
        return Err(WindowError::OutOfRange {
            value: y,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(unscale_unchecked(y, policy))
}

/// Inverse scaling without the range check, for raw model outputs.
pub fn unscale_unchecked(y: f64, policy: &RulPolicy) -> f64 {
    y * (policy.y_max() - policy.y_min()) + policy.y_min()
}

/// One padded, masked window with its scaled target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// Row-major `pad_to × d_features`; rows with mask 0 are zero.
    pub features: Vec<f64>,
    /// 1 for an observed step, 0 for padding. The ones form one block.
    pub mask: Vec<u8>,
    pub target_scaled: f64,
    pub unit_id: u32,
    pub end_cycle: u32,
    pub pad_to: usize,
    pub d_features: usize,
}

impl WindowedSample {
    pub fn window_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_features..(i + 1) * self.d_features]
    }

    /// Index of the last observed step.
    pub fn last_unmasked(&self) -> Option<usize> {
        self.mask.iter().rposition(|&m| m == 1)
    }
}

/// Place `rows` (taken from `traj`, indices `start..start+len`) into a
/// `pad_to`-row buffer beginning at row `offset`.
fn make_sample(
    traj: &NormalizedTrajectory,
    start: usize,
    len: usize,
    offset: usize,
    pad_to: usize,
    target_scaled: f64,
) -> WindowedSample {
    let d = traj.d_features;
    let mut features = vec![0.0; pad_to * d];
    let mut mask = vec![0u8; pad_to];
    features[offset * d..(offset + len) * d].copy_from_slice(&traj.features[start * d..(start + len) * d]);
    mask[offset..offset + len].iter_mut().for_each(|m| *m = 1);
    WindowedSample {
        features,
        mask,
        target_scaled,
        unit_id: traj.unit_id,
        end_cycle: traj.cycles[start + len - 1],
        pad_to,
        d_features: d,
    }
}

fn training_target(traj: &NormalizedTrajectory, end_idx: usize, policy: &RulPolicy) -> Result<f64, WindowError> {
    let failure = *traj.cycles.last().expect("non-empty trajectory");
    let rul = piecewise_rul(traj.cycles[end_idx], failure, policy)?;
    scale_target(f64::from(rul), policy)
}

/// Constant-length windows advanced one cycle at a time. A trajectory shorter
/// than `size` yields one left-padded sample.
pub fn sliding_windows(
    traj: &NormalizedTrajectory,
    size: usize,
    policy: &RulPolicy,
    pad_to: usize,
) -> Result<Vec<WindowedSample>, WindowError> {
    WindowMode::Sliding { size }.validate()?;
    if pad_to < size {
        return Err(WindowError::PadTooShort { pad_to, len: size });
    }
    let l = traj.len();
    if l == 0 {
        return Ok(Vec::new());
    }
    if l < size {
        let target = training_target(traj, l - 1, policy)?;
        return Ok(vec![make_sample(traj, 0, l, pad_to - l, pad_to, target)]);
    }
    (0..=l - size)
        .map(|start| {
            let target = training_target(traj, start + size - 1, policy)?;
            Ok(make_sample(traj, start, size, pad_to - size, pad_to, target))
        })
        .collect()
}

/// Windows anchored at the first cycle with lengths `min_len, min_len + step,
/// …` up to the trajectory length, right-padded to `pad_to`. Returns a
/// warning when the trajectory is too short to emit anything.
pub fn expanding_windows(
    traj: &NormalizedTrajectory,
    min_len: usize,
    step: usize,
    policy: &RulPolicy,
    pad_to: usize,
) -> Result<(Vec<WindowedSample>, Option<String>), WindowError> {
    WindowMode::Expanding { min_len, step }.validate()?;
    let l = traj.len();
    if pad_to < l {
        return Err(WindowError::PadTooShort { pad_to, len: l });
    }
    if l < min_len {
        let warning = format!(
            "unit {} has {l} cycles, fewer than the minimum window {min_len}; no samples emitted",
            traj.unit_id
        );
        return Ok((Vec::new(), Some(warning)));
    }
    let samples = (min_len..=l)
        .step_by(step)
        .map(|len| {
            let target = training_target(traj, len - 1, policy)?;
            Ok(make_sample(traj, 0, len, 0, pad_to, target))
        })
        .collect::<Result<_, WindowError>>()?;
    Ok((samples, None))
}

/// Samples for a whole training set plus the resolved padding length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub spec: WindowSpec,
    pub policy: RulPolicy,
    pub samples: Vec<WindowedSample>,
    pub warnings: Vec<String>,
}

/// Window every unit of a normalized training set, ordered by unit id then
/// end cycle. Expanding mode pads to the longest training trajectory.
pub fn build_training_set(
    dataset: &NormalizedDataset,
    mode: WindowMode,
    policy: &RulPolicy,
) -> Result<TrainingSet, WindowError> {
    mode.validate()?;
    let pad_to = match mode {
        WindowMode::Sliding { size } => size,
        WindowMode::Expanding { .. } => dataset.trajectories.iter().map(|t| t.len()).max().unwrap_or(0),
    };
    let mut units: Vec<&NormalizedTrajectory> = dataset.trajectories.iter().collect();
    units.sort_by_key(|t| t.unit_id);
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for t in units {
        match mode {
            WindowMode::Sliding { size } => samples.extend(sliding_windows(t, size, policy, pad_to)?),
            WindowMode::Expanding { min_len, step } => {
                let (s, w) = expanding_windows(t, min_len, step, policy, pad_to)?;
                samples.extend(s);
                warnings.extend(w);
            }
        }
    }
    Ok(TrainingSet {
        spec: WindowSpec { mode, pad_to },
        policy: *policy,
        samples,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSample {
    pub sample: WindowedSample,
    /// Set when the observed history was longer than `pad_to` and only the
    /// most recent `pad_to` cycles were kept.
    pub truncated: bool,
}

/// The sample scored for a test unit at its last observed cycle. The target
/// is the clipped, scaled ground truth when `true_rul` is known, else 0.
pub fn build_inference_sample(
    traj: &NormalizedTrajectory,
    spec: &WindowSpec,
    policy: &RulPolicy,
    true_rul: Option<u32>,
) -> Result<InferenceSample, WindowError> {
    spec.mode.validate()?;
    let l = traj.len();
    if l == 0 {
        return Err(WindowError::InvalidSpec(format!("unit {} has no cycles", traj.unit_id)));
    }
    let target = match true_rul {
        Some(r) => scale_target(f64::from(r.min(policy.rul_early)), policy)?,
        None => 0.0,
    };
    let pad_to = spec.pad_to;
    let (sample, truncated) = match spec.mode {
        WindowMode::Expanding { .. } => {
            let len = l.min(pad_to);
            (make_sample(traj, l - len, len, 0, pad_to, target), l > pad_to)
        }
        WindowMode::Sliding { size } => {
            if pad_to < size {
                return Err(WindowError::PadTooShort { pad_to, len: size });
            }
            let len = l.min(size);
            (make_sample(traj, l - len, len, pad_to - len, pad_to, target), false)
        }
    };
    Ok(InferenceSample { sample, truncated })
}

/// Structured-text sidecar written next to a sample stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSetMeta {
    pub spec: WindowSpec,
    pub policy: RulPolicy,
    pub count: usize,
    pub d_features: usize,
    pub sensors: Vec<usize>,
    pub warnings: Vec<String>,
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

/// Binary sample stream: little-endian `u64` header `(pad_to, d, count)`,
/// then per sample the features as `f64`, the mask as bytes, the target as
/// `f64`, and `unit_id`, `end_cycle` as `u64`.
pub fn write_samples<W: Write>(
    samples: &[WindowedSample],
    pad_to: usize,
    d_features: usize,
    mut sink: W,
) -> Result<(), WindowError> {
    put_u64(&mut sink, pad_to as u64)?;
    put_u64(&mut sink, d_features as u64)?;
    put_u64(&mut sink, samples.len() as u64)?;
    for s in samples {
        if s.pad_to != pad_to || s.d_features != d_features {
            return Err(WindowError::Format(format!(
                "sample for unit {} has shape {}x{}, stream is {pad_to}x{d_features}",
                s.unit_id, s.pad_to, s.d_features
            )));
        }
        for v in &s.features {
            sink.write_all(&v.to_le_bytes())?;
        }
        sink.write_all(&s.mask)?;
        sink.write_all(&s.target_scaled.to_le_bytes())?;
        put_u64(&mut sink, u64::from(s.unit_id))?;
        put_u64(&mut sink, u64::from(s.end_cycle))?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(mut source: R) -> Result<Vec<WindowedSample>, WindowError> {
    let pad_to = get_u64(&mut source)? as usize;
    let d = get_u64(&mut source)? as usize;
    let count = get_u64(&mut source)? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let features = (0..pad_to * d)
            .map(|_| get_f64(&mut source))
            .collect::<io::Result<Vec<f64>>>()?;
        let mut mask = vec![0u8; pad_to];
        source.read_exact(&mut mask)?;
        if mask.iter().any(|&m| m > 1) {
            return Err(WindowError::Format("mask byte other than 0/1".into()));
        }
        let target_scaled = get_f64(&mut source)?;
        let unit_id = u32::try_from(get_u64(&mut source)?).map_err(|e| WindowError::Format(e.to_string()))?;
        let end_cycle = u32::try_from(get_u64(&mut source)?).map_err(|e| WindowError::Format(e.to_string()))?;
        samples.push(WindowedSample {
            features,
            mask,
            target_scaled,
            unit_id,
            end_cycle,
            pad_to,
            d_features: d,
        });
    }
    let mut rest = [0u8; 1];
    if source.read(&mut rest)? != 0 {
        return Err(WindowError::Format("trailing bytes after the last sample".into()));
    }
    Ok(samples)
}
