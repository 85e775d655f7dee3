//! RMSE, the asymmetric PHM08 score and descriptive error statistics.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmapss::Dataset;
use crate::regimes::RegimeModel;
use crate::transformer::{ModelError, RulPredictor};
use crate::windowing::{build_inference_sample, unscale_unchecked, RulPolicy, WindowError, WindowSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no values to score")]
    EmptyInput,
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no ground-truth RUL for unit {unit_id}")]
    MissingTruth { unit_id: u32 },
    #[error("model expects windows of {expected:?} (pad_to, d_features), evaluation builds {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Window(#[from] WindowError),
}

/// Exponential scale of the score for early (`d < 0`) and late (`d ≥ 0`)
/// errors. A smaller constant penalizes more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub a_early: f64,
    pub a_late: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            a_early: 13.0,
            a_late: 10.0,
        }
    }
}

fn check(preds: &[f64], truths: &[f64]) -> Result<(), EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

/// `sqrt(mean((pred - truth)²))`.
pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    check(preds, truths)?;
    let sum: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / preds.len() as f64).sqrt())
}

/// Penalty for a single error `d = pred - truth`.
pub fn phm08_term(d: f64, params: &ScoreParams) -> f64 {
    if d < 0.0 {
        (-d / params.a_early).exp_m1()
    } else {
        (d / params.a_late).exp_m1()
    }
}

/// Sum of [`phm08_term`] over all units.
pub fn phm08_score(preds: &[f64], truths: &[f64], params: &ScoreParams) -> Result<f64, EvalError> {
    check(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(p, t)| phm08_term(p - t, params)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for one value.
    pub std: f64,
    /// Adjusted Fisher–Pearson standardized third moment; 0 when fewer than
    /// three values or no spread.
    pub skew: f64,
    /// `3 (mean - median) / std`; 0 when `std` is 0.
    pub pearson_skew: f64,
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    let m2 = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let m3 = errors.iter().map(|e| (e - mean).powi(3)).sum::<f64>() / n;
    let std = if errors.len() > 1 {
        (m2 * n / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let skew = if errors.len() > 2 && m2 > 0.0 {
        (n * (n - 1.0)).sqrt() / (n - 2.0) * m3 / m2.powf(1.5)
    } else {
        0.0
    };
    let pearson_skew = if std > 0.0 { 3.0 * (mean - median) / std } else { 0.0 };
    Ok(ErrorStats {
        mean,
        median,
        std,
        skew,
        pearson_skew,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPrediction {
    pub unit_id: u32,
    pub end_cycle: u32,
    /// Ground truth as scored, after optional clipping.
    pub true_rul: u32,
    /// Prediction in cycles, clamped to `[0, rul_early]`.
    pub predicted: f64,
}

impl UnitPrediction {
    pub fn error(&self) -> f64 {
        self.predicted - f64::from(self.true_rul)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Clip ground truth to `rul_early` before scoring.
    pub clip_truth: bool,
    pub score: ScoreParams,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            clip_truth: true,
            score: ScoreParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_units: usize,
    pub rmse: f64,
    pub score: f64,
    pub stats: ErrorStats,
    pub options: EvalOptions,
    /// Units whose history exceeded the window and was cut to its most
    /// recent cycles.
    pub truncated_units: Vec<u32>,
    pub predictions: Vec<UnitPrediction>,
}

impl EvalReport {
    /// Score a finished prediction set.
    pub fn from_predictions(predictions: Vec<UnitPrediction>, options: EvalOptions) -> Result<Self, EvalError> {
        let preds: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
        let truths: Vec<f64> = predictions.iter().map(|p| f64::from(p.true_rul)).collect();
        let errors: Vec<f64> = predictions.iter().map(UnitPrediction::error).collect();
        Ok(Self {
            n_units: predictions.len(),
            rmse: rmse(&preds, &truths)?,
            score: phm08_score(&preds, &truths, &options.score)?,
            stats: error_stats(&errors)?,
            options,
            truncated_units: Vec::new(),
            predictions,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `unit_id,end_cycle,true,predicted,error`.
    pub fn write_predictions_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "unit_id,end_cycle,true,predicted,error")?;
        for p in &self.predictions {
            writeln!(
                sink,
                "{},{},{},{},{}",
                p.unit_id,
                p.end_cycle,
                p.true_rul,
                p.predicted,
                p.error()
            )?;
        }
        sink.flush()
    }

    /// `rmse,score,mean,median,std,skew`.
    pub fn write_metrics_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "rmse,score,mean,median,std,skew")?;
        let s = &self.stats;
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            self.rmse, self.score, s.mean, s.median, s.std, s.skew
        )?;
        sink.flush()
    }
}

/// Predict every test unit at its last observed cycle and score against the
/// ground truth.
pub fn evaluate(
    predictor: &dyn RulPredictor,
    regime: &RegimeModel,
    spec: &WindowSpec,
    policy: &RulPolicy,
    test: &Dataset,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let normalized = regime.normalize(test);
    let mut samples = Vec::with_capacity(normalized.trajectories.len());
    let mut truths = Vec::with_capacity(samples.capacity());
    let mut truncated_units = Vec::new();
    for traj in &normalized.trajectories {
        let truth = test
            .true_rul(traj.unit_id)
            .ok_or(EvalError::MissingTruth { unit_id: traj.unit_id })?;
        let inf = build_inference_sample(traj, spec, policy, Some(truth))?;
        if inf.truncated {
            truncated_units.push(traj.unit_id);
        }
        samples.push(inf.sample);
        truths.push(if options.clip_truth { truth.min(policy.rul_early) } else { truth });
    }
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let found = (spec.pad_to, normalized.sensors.len());
    if predictor.expected_shape() != found {
        return Err(EvalError::ShapeMismatch {
            expected: predictor.expected_shape(),
            found,
        });
    }
    let scaled = predictor.predict_scaled(&samples)?;
    let predictions = samples
        .iter()
        .zip(&scaled)
        .zip(&truths)
        .map(|((s, &y), &t)| UnitPrediction {
            unit_id: s.unit_id,
            end_cycle: s.end_cycle,
            true_rul: t,
            predicted: unscale_unchecked(y, policy).clamp(policy.y_min(), policy.y_max()),
        })
        .collect();
    let mut report = EvalReport::from_predictions(predictions, *options)?;
    report.truncated_units = truncated_units;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmapss::{generate_synthetic, SyntheticSpec};
    use crate::regimes::{fit_regime_model, RegimeOptions};
    use crate::windowing::{WindowMode, WindowedSample};

    #[test]
    fn rmse_examples() {
        assert!((rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[5.0], &[5.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[2.0], &[9.0]).unwrap(), 7.0);
        assert!(matches!(rmse(&[], &[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn score_examples() {
        let p = ScoreParams::default();
        let e1 = std::f64::consts::E - 1.0;
        assert!((phm08_score(&[10.0], &[0.0], &p).unwrap() - e1).abs() < 1e-12);
        assert!((phm08_score(&[0.0], &[13.0], &p).unwrap() - e1).abs() < 1e-12);
        assert_eq!(phm08_score(&[4.0, 7.0], &[4.0, 7.0], &p).unwrap(), 0.0);
        for x in [0.5, 1.0, 10.0, 50.0] {
            assert!(phm08_term(x, &p) > phm08_term(-x, &p));
        }
    }

    #[test]
    fn stats_examples() {
        let s = error_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.median, s.skew), (2.0, 2.0, 0.0));
        assert_eq!(s.std, 1.0);
        let s = error_stats(&[1.0, 1.0, 10.0]).unwrap();
        assert_eq!((s.mean, s.median), (4.0, 1.0));
        // m2 = 18, m3 = 54, g1 = 54 / 18^1.5, G1 = sqrt(6) * g1
        let expected = 6f64.sqrt() * 54.0 / 18f64.powf(1.5);
        assert!((s.skew - expected).abs() < 1e-12 && s.skew > 0.0);
        assert!((s.pearson_skew - 9.0 / 27f64.sqrt()).abs() < 1e-12);
        assert_eq!(error_stats(&[1.0, 4.0]).unwrap().median, 2.5);
    }

    struct Oracle((usize, usize));
    impl RulPredictor for Oracle {
        fn expected_shape(&self) -> (usize, usize) {
            self.0
        }
        fn predict_scaled(&self, samples: &[WindowedSample]) -> Result<Vec<f64>, ModelError> {
            Ok(samples.iter().map(|s| s.target_scaled).collect())
        }
    }

    struct Constant((usize, usize), f64);
    impl RulPredictor for Constant {
        fn expected_shape(&self) -> (usize, usize) {
            self.0
        }
        fn predict_scaled(&self, samples: &[WindowedSample]) -> Result<Vec<f64>, ModelError> {
            Ok(vec![self.1; samples.len()])
        }
    }

    #[test]
    fn oracle_and_constant_predictors() {
        let (train, mut test) = generate_synthetic(&SyntheticSpec {
            n_units: 6,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let regime = fit_regime_model(&train, &RegimeOptions::default(), 0).unwrap();
        let spec = WindowSpec {
            mode: WindowMode::sliding(10),
            pad_to: 10,
        };
        let policy = RulPolicy::default();
        let shape = (10, 14);
        let opts = EvalOptions::default();
        let r = evaluate(&Oracle(shape), &regime, &spec, &policy, &test, &opts).unwrap();
        assert_eq!((r.rmse, r.score), (0.0, 0.0));

        let ids = test.unit_ids();
        let truth = test.true_test_ruls.as_mut().unwrap();
        truth.clear();
        truth.insert(ids[0], 10);
        truth.insert(ids[1], 20);
        test.trajectories.truncate(2);
        let r = evaluate(&Constant(shape, 0.0), &regime, &spec, &policy, &test, &opts).unwrap();
        assert!((r.rmse - 250f64.sqrt()).abs() < 1e-12);
        let p = ScoreParams::default();
        let expected = (10.0 / 13.0f64).exp_m1() + (20.0 / 13.0f64).exp_m1();
        assert!((r.score - expected).abs() < 1e-12);
        assert!(r.score > 0.0 && p.a_late < p.a_early);
        let mut csv = Vec::new();
        r.write_predictions_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("unit_id,end_cycle,true,predicted,error\n"));
        assert!(matches!(
            evaluate(&Constant((11, 14), 0.0), &regime, &spec, &policy, &test, &opts),
            Err(EvalError::ShapeMismatch { .. })
        ));
    }
}
