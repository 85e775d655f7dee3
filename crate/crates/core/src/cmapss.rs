//! Reading, writing, and synthesizing run-to-failure trajectories in the
//! 26-column C-MAPSS text layout: unit id, cycle, 3 operating settings and
//! 21 sensor channels per whitespace-delimited row.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regimes::DEFAULT_SENSORS;
use crate::seed::rng_for;

pub const N_SETTINGS: usize = 3;
pub const N_SENSORS: usize = 21;
pub const N_COLUMNS: usize = 2 + N_SETTINGS + N_SENSORS;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: unit {unit} expected cycle {expected}, found {found}")]
    NonContiguousCycles {
        line: usize,
        unit: u32,
        expected: u32,
        found: u32,
    },
    #[error("line {line}: unit {unit} reappears after its block ended")]
    UnitNotContiguous { line: usize, unit: u32 },
    #[error("truth file has {found} values but the dataset has {expected} units")]
    CountMismatch { expected: usize, found: usize },
    #[error("ground truth can only be attached to a test dataset")]
    NotTestData,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    Train,
    Test,
}

/// One unit's record from its first cycle to failure (train) or to the last
/// observed cycle (test).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub unit_id: u32,
    /// Always `1..=len`.
    pub cycles: Vec<u32>,
    pub op_settings: Vec<[f64; N_SETTINGS]>,
    pub sensors: Vec<[f64; N_SENSORS]>,
}

impl Trajectory {
    pub fn new(
        unit_id: u32,
        op_settings: Vec<[f64; N_SETTINGS]>,
        sensors: Vec<[f64; N_SENSORS]>,
    ) -> Self {
        assert_eq!(op_settings.len(), sensors.len(), "one settings row per sensor row");
        assert!(!sensors.is_empty(), "trajectory needs at least one cycle");
        let cycles = (1..=sensors.len() as u32).collect();
        Self {
            unit_id,
            cycles,
            op_settings,
            sensors,
        }
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn last_cycle(&self) -> u32 {
        *self.cycles.last().expect("non-empty trajectory")
    }

    /// Keep only the first `len` cycles.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            unit_id: self.unit_id,
            cycles: self.cycles[..len].to_vec(),
            op_settings: self.op_settings[..len].to_vec(),
            sensors: self.sensors[..len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// In order of first appearance in the source file.
    pub trajectories: Vec<Trajectory>,
    /// Cycles remaining after each test unit's last recorded cycle.
    pub true_test_ruls: Option<BTreeMap<u32, u32>>,
}

impl Dataset {
    pub fn new(kind: DatasetKind, trajectories: Vec<Trajectory>) -> Self {
        Self {
            kind,
            trajectories,
            true_test_ruls: None,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn unit(&self, unit_id: u32) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.unit_id == unit_id)
    }

    pub fn unit_ids(&self) -> Vec<u32> {
        self.trajectories.iter().map(|t| t.unit_id).collect()
    }

    pub fn total_rows(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn true_rul(&self, unit_id: u32) -> Option<u32> {
        self.true_test_ruls.as_ref()?.get(&unit_id).copied()
    }
}

fn parse_id(field: &str, line: usize, what: &str) -> Result<u32, DataError> {
    let malformed = || DataError::MalformedRow {
        line,
        reason: format!("{what} {field:?} is not a positive integer"),
    };
    if let Ok(v) = field.parse::<u32>() {
        return if v >= 1 { Ok(v) } else { Err(malformed()) };
    }
    // some exports write integral ids as reals ("1.0")
    let v: f64 = field.parse().map_err(|_| malformed())?;
    if v >= 1.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
        Ok(v as u32)
    } else {
        Err(malformed())
    }
}

/// Parse a whitespace-delimited 26-column trajectory file.
pub fn parse_trajectories(text: &str, kind: DatasetKind) -> Result<Dataset, DataError> {
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut seen: HashSet<u32> = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != N_COLUMNS {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("expected {N_COLUMNS} fields, found {}", fields.len()),
            });
        }
        let unit = parse_id(fields[0], line, "unit id")?;
        let cycle = parse_id(fields[1], line, "cycle")?;
        let mut values = [0.0f64; N_SETTINGS + N_SENSORS];
        for (slot, field) in values.iter_mut().zip(&fields[2..]) {
            *slot = field.parse().map_err(|_| DataError::MalformedRow {
                line,
                reason: format!("{field:?} is not a number"),
            })?;
            if !slot.is_finite() {
                return Err(DataError::MalformedRow {
                    line,
                    reason: format!("{field:?} is not finite"),
                });
            }
        }
        let mut settings = [0.0; N_SETTINGS];
        settings.copy_from_slice(&values[..N_SETTINGS]);
        let mut sensors = [0.0; N_SENSORS];
        sensors.copy_from_slice(&values[N_SETTINGS..]);

        match trajectories.last_mut() {
            Some(t) if t.unit_id == unit => {
                let expected = t.last_cycle() + 1;
                if cycle != expected {
                    return Err(DataError::NonContiguousCycles {
                        line,
                        unit,
                        expected,
                        found: cycle,
                    });
                }
                t.cycles.push(cycle);
                t.op_settings.push(settings);
                t.sensors.push(sensors);
            }
            _ => {
                if !seen.insert(unit) {
                    return Err(DataError::UnitNotContiguous { line, unit });
                }
                if cycle != 1 {
                    return Err(DataError::NonContiguousCycles {
                        line,
                        unit,
                        expected: 1,
                        found: cycle,
                    });
                }
                trajectories.push(Trajectory::new(unit, vec![settings], vec![sensors]));
            }
        }
    }
    Ok(Dataset::new(kind, trajectories))
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_trajectories(path: impl AsRef<Path>, kind: DatasetKind) -> Result<Dataset, DataError> {
    parse_trajectories(&read_text(path.as_ref())?, kind)
}

/// Attach a ground-truth RUL file: one nonnegative integer per line, paired
/// with test units in order of first appearance.
pub fn parse_rul_truth(text: &str, dataset: Dataset) -> Result<Dataset, DataError> {
    if dataset.kind != DatasetKind::Test {
        return Err(DataError::NotTestData);
    }
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let field = raw.trim();
        if field.is_empty() {
            continue;
        }
        let v = field.parse::<u32>().ok().or_else(|| {
            // tolerate integral reals
            field
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v <= f64::from(u32::MAX))
                .map(|v| v as u32)
        });
        match v {
            Some(v) => values.push(v),
            None => {
                return Err(DataError::MalformedRow {
                    line: idx + 1,
                    reason: format!("{field:?} is not a nonnegative integer"),
                })
            }
        }
    }
    if values.len() != dataset.len() {
        return Err(DataError::CountMismatch {
            expected: dataset.len(),
            found: values.len(),
        });
    }
    let truths = dataset.unit_ids().into_iter().zip(values).collect();
    Ok(Dataset {
        true_test_ruls: Some(truths),
        ..dataset
    })
}

pub fn load_rul_truth(path: impl AsRef<Path>, dataset: Dataset) -> Result<Dataset, DataError> {
    parse_rul_truth(&read_text(path.as_ref())?, dataset)
}

/// Write trajectories in the 26-column layout. Reals use the shortest
/// representation that parses back to the same value.
pub fn write_trajectories<W: Write>(dataset: &Dataset, mut sink: W) -> io::Result<()> {
    for t in &dataset.trajectories {
        for ((cycle, settings), sensors) in t.cycles.iter().zip(&t.op_settings).zip(&t.sensors) {
            write!(sink, "{} {}", t.unit_id, cycle)?;
            for v in settings.iter().chain(sensors.iter()) {
                write!(sink, " {v}")?;
            }
            writeln!(sink)?;
        }
    }
    sink.flush()
}

pub fn write_rul_truth<W: Write>(dataset: &Dataset, mut sink: W) -> io::Result<()> {
    if let Some(truths) = &dataset.true_test_ruls {
        for id in dataset.unit_ids() {
            writeln!(sink, "{}", truths[&id])?;
        }
    }
    sink.flush()
}

/// Parameters of the synthetic fleet generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_units: usize,
    /// Inclusive range of failure cycles.
    pub life_range: (u32, u32),
    pub n_regimes: usize,
    /// Sensor noise, in units of each sensor's scale.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_units: 20,
            life_range: (120, 220),
            n_regimes: 1,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_owned()));
        if self.n_units == 0 {
            return bad("n_units must be positive");
        }
        if self.life_range.0 < 10 {
            return bad("life_range lower bound must be at least 10");
        }
        if self.life_range.0 > self.life_range.1 {
            return bad("life_range is empty");
        }
        if self.n_regimes == 0 {
            return bad("n_regimes must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be a nonnegative real");
        }
        Ok(())
    }
}

// Operating-setting ranges loosely modelled on altitude, Mach number and
// throttle angle.
const SETTING_LO: [f64; N_SETTINGS] = [0.0, 0.0, 60.0];
const SETTING_SPAN: [f64; N_SETTINGS] = [42.0, 0.84, 40.0];
const SETTING_JITTER: f64 = 0.002;
const MIN_CENTROID_GAP: f64 = 0.25;

struct Fleet {
    centroids: Vec<[f64; N_SETTINGS]>,
    scale: [f64; N_SENSORS],
    base: [f64; N_SENSORS],
    regime_offset: Vec<[f64; N_SENSORS]>,
    amplitude: [f64; N_SENSORS],
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl Fleet {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = rng_for(spec.seed, "synthetic/fleet", 0);
        let mut unit_centroids: Vec<[f64; N_SETTINGS]> = Vec::with_capacity(spec.n_regimes);
        let mut attempts = 0;
        while unit_centroids.len() < spec.n_regimes {
            let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            attempts += 1;
            let gap = if attempts < 10_000 { MIN_CENTROID_GAP } else { 0.0 };
            let far = unit_centroids.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= gap
            });
            if far {
                unit_centroids.push(c);
            }
        }
        let centroids = unit_centroids
            .iter()
            .map(|c| std::array::from_fn(|d| SETTING_LO[d] + c[d] * SETTING_SPAN[d]))
            .collect();

        let mut base = [0.0; N_SENSORS];
        let mut scale = [0.0; N_SENSORS];
        for s in 0..N_SENSORS {
            base[s] = rng.gen_range(10.0..600.0);
            scale[s] = base[s] / 100.0;
        }
        let regime_offset = (0..spec.n_regimes)
            .map(|_| std::array::from_fn(|s| 3.0 * scale[s] * normal(&mut rng)))
            .collect();
        let mut amplitude = [0.0; N_SENSORS];
        for &sensor in DEFAULT_SENSORS {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            amplitude[sensor - 1] = sign * rng.gen_range(1.0..2.0) * scale[sensor - 1];
        }
        Self {
            centroids,
            scale,
            base,
            regime_offset,
            amplitude,
        }
    }

    fn unit(&self, spec: &SyntheticSpec, unit_id: u32, stream: &str) -> Trajectory {
        let mut rng = rng_for(spec.seed, stream, u64::from(unit_id));
        let life = rng.gen_range(spec.life_range.0..=spec.life_range.1);
        let knee_frac: f64 = rng.gen_range(0.4..=0.8);
        let knee = (knee_frac * f64::from(life)).round();
        let span = f64::from(life) - knee;
        let mut settings = Vec::with_capacity(life as usize);
        let mut sensors = Vec::with_capacity(life as usize);
        for t in 1..=life {
            let regime = rng.gen_range(0..self.centroids.len());
            let c = self.centroids[regime];
            settings.push(std::array::from_fn(|d| {
                c[d] + SETTING_JITTER * SETTING_SPAN[d] * normal(&mut rng)
            }));
            let health = if span > 0.0 {
                ((f64::from(t) - knee) / span).max(0.0)
            } else {
                0.0
            };
            let row: [f64; N_SENSORS] = std::array::from_fn(|s| {
                self.base[s]
                    + self.regime_offset[regime][s]
                    + self.amplitude[s] * health
                    + spec.noise_std * self.scale[s] * normal(&mut rng)
            });
            sensors.push(row);
        }
        Trajectory::new(unit_id, settings, sensors)
    }
}

/// Generate a seeded train/test pair. Training units run to failure; test
/// units are cut at a uniformly drawn cycle with the remaining life recorded
/// as ground truth.
///
/// Each unit draws a failure cycle from `life_range` and a knee at a random
/// fraction in `[0.4, 0.8]` of its life. The 14 default-selected sensors
/// follow a flat-then-linear health ramp; all sensors carry a per-regime
/// offset and Gaussian noise scaled by `noise_std`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset), DataError> {
    spec.validate()?;
    let fleet = Fleet::new(spec);
    let train: Vec<Trajectory> = (1..=spec.n_units as u32)
        .map(|u| fleet.unit(spec, u, "synthetic/train"))
        .collect();
    let mut truths = BTreeMap::new();
    let mut cut_rng = rng_for(spec.seed, "synthetic/cut", 0);
    let test: Vec<Trajectory> = (1..=spec.n_units as u32)
        .map(|u| {
            let full = fleet.unit(spec, u, "synthetic/test");
            let life = full.len();
            let observed = cut_rng.gen_range(5.min(life)..=life);
            truths.insert(u, (life - observed) as u32);
            full.truncated(observed)
        })
        .collect();
    let mut test = Dataset::new(DatasetKind::Test, test);
    test.true_test_ruls = Some(truths);
    Ok((Dataset::new(DatasetKind::Train, train), test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(unit: u32, cycle: u32, fill: f64) -> String {
        let mut s = format!("{unit} {cycle} 0.0 0.0 100.0");
        for i in 0..N_SENSORS {
            s.push_str(&format!(" {}", fill + i as f64));
        }
        s
    }

    #[test]
    fn single_row_dataset() {
        let ds = parse_trajectories(&row(1, 1, 5.0), DatasetKind::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.trajectories[0].len(), 1);
        assert_eq!(ds.trajectories[0].op_settings[0], [0.0, 0.0, 100.0]);
        assert_eq!(ds.trajectories[0].sensors[0][20], 25.0);
    }

    #[test]
    fn groups_rows_by_unit() {
        let text = [row(1, 1, 0.0), row(1, 2, 0.0), row(2, 1, 0.0)].join("\n");
        let ds = parse_trajectories(&text, DatasetKind::Train).unwrap();
        let lens: Vec<usize> = ds.trajectories.iter().map(Trajectory::len).collect();
        assert_eq!(lens, vec![2, 1]);
        assert_eq!(ds.unit_ids(), vec![1, 2]);
    }

    #[test]
    fn scientific_notation_accepted() {
        let text = row(1, 1, 0.0).replace(" 100.0", " 1.0e2");
        let ds = parse_trajectories(&text, DatasetKind::Train).unwrap();
        assert_eq!(ds.trajectories[0].op_settings[0][2], 100.0);
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let text = format!("{}\n{} 7", row(1, 1, 0.0), row(1, 2, 0.0));
        match parse_trajectories(&text, DatasetKind::Train) {
            Err(DataError::MalformedRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let short = "1 1 0.0 0.0";
        assert!(matches!(
            parse_trajectories(short, DatasetKind::Train),
            Err(DataError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn non_numeric_field_rejected() {
        let text = row(1, 1, 0.0).replace("100.0", "abc");
        assert!(matches!(
            parse_trajectories(&text, DatasetKind::Train),
            Err(DataError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn cycle_gaps_and_restarts_rejected() {
        let gap = [row(1, 1, 0.0), row(1, 3, 0.0)].join("\n");
        assert!(matches!(
            parse_trajectories(&gap, DatasetKind::Train),
            Err(DataError::NonContiguousCycles { line: 2, expected: 2, found: 3, .. })
        ));
        let restart = [row(1, 1, 0.0), row(1, 2, 0.0), row(1, 1, 0.0)].join("\n");
        assert!(matches!(
            parse_trajectories(&restart, DatasetKind::Train),
            Err(DataError::NonContiguousCycles { line: 3, .. })
        ));
        let late_start = row(4, 2, 0.0);
        assert!(matches!(
            parse_trajectories(&late_start, DatasetKind::Train),
            Err(DataError::NonContiguousCycles { expected: 1, .. })
        ));
        let reappear = [row(1, 1, 0.0), row(2, 1, 0.0), row(1, 2, 0.0)].join("\n");
        assert!(matches!(
            parse_trajectories(&reappear, DatasetKind::Train),
            Err(DataError::UnitNotContiguous { line: 3, unit: 1 })
        ));
    }

    fn three_unit_test_set() -> Dataset {
        let text = [row(1, 1, 0.0), row(2, 1, 0.0), row(3, 1, 0.0)].join("\n");
        parse_trajectories(&text, DatasetKind::Test).unwrap()
    }

    #[test]
    fn truth_pairs_positionally() {
        let ds = parse_rul_truth("112\n98\n20\n", three_unit_test_set()).unwrap();
        let t = ds.true_test_ruls.unwrap();
        assert_eq!(t[&1], 112);
        assert_eq!(t[&2], 98);
        assert_eq!(t[&3], 20);
    }

    #[test]
    fn truth_errors() {
        let one = parse_trajectories(&row(1, 1, 0.0), DatasetKind::Test).unwrap();
        assert!(matches!(
            parse_rul_truth("", one.clone()),
            Err(DataError::CountMismatch { expected: 1, found: 0 })
        ));
        assert!(matches!(
            parse_rul_truth("-3", one.clone()),
            Err(DataError::MalformedRow { line: 1, .. })
        ));
        let mut train = one;
        train.kind = DatasetKind::Train;
        assert!(matches!(parse_rul_truth("3", train), Err(DataError::NotTestData)));
    }

    #[test]
    fn empty_dataset_writes_empty_file() {
        let mut buf = Vec::new();
        write_trajectories(&Dataset::new(DatasetKind::Train, vec![]), &mut buf).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn synthetic_is_deterministic_and_seed_sensitive() {
        let spec = SyntheticSpec {
            n_units: 4,
            life_range: (30, 60),
            n_regimes: 3,
            noise_std: 0.1,
            seed: 11,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.0.trajectories[0].sensors[0], c.0.trajectories[0].sensors[0]);
    }

    #[test]
    fn synthetic_test_truth_matches_truncation() {
        let spec = SyntheticSpec {
            n_units: 6,
            life_range: (20, 40),
            ..SyntheticSpec::default()
        };
        let (train, test) = generate_synthetic(&spec).unwrap();
        assert_eq!(train.kind, DatasetKind::Train);
        let truths = test.true_test_ruls.as_ref().unwrap();
        assert_eq!(truths.len(), 6);
        for t in &train.trajectories {
            assert!((20..=40).contains(&t.len()));
        }
        for t in &test.trajectories {
            assert!(t.len() >= 5);
            assert!(t.len() + truths[&t.unit_id] as usize <= 40);
        }
    }

    #[test]
    fn synthetic_regimes_form_distinct_neighbourhoods() {
        let spec = SyntheticSpec {
            n_units: 5,
            life_range: (40, 60),
            n_regimes: 6,
            noise_std: 0.05,
            seed: 3,
        };
        let (train, _) = generate_synthetic(&spec).unwrap();
        let mut centres: Vec<[f64; N_SETTINGS]> = Vec::new();
        let norm = |a: &[f64; 3], b: &[f64; 3]| {
            (0..3)
                .map(|d| ((a[d] - b[d]) / SETTING_SPAN[d]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for t in &train.trajectories {
            for s in &t.op_settings {
                if !centres.iter().any(|c| norm(c, s) < 0.05) {
                    centres.push(*s);
                }
            }
        }
        assert_eq!(centres.len(), 6);
    }

    #[test]
    fn noiseless_degradation_is_piecewise_linear() {
        let spec = SyntheticSpec {
            n_units: 3,
            life_range: (40, 80),
            n_regimes: 1,
            noise_std: 0.0,
            seed: 5,
        };
        let (train, _) = generate_synthetic(&spec).unwrap();
        for t in &train.trajectories {
            for &sensor in DEFAULT_SENSORS {
                let y: Vec<f64> = t.sensors.iter().map(|r| r[sensor - 1]).collect();
                let first = y[0];
                let tol = 1e-9 * first.abs().max(1.0);
                let bends = y
                    .windows(3)
                    .filter(|w| (w[2] - 2.0 * w[1] + w[0]).abs() > tol)
                    .count();
                assert_eq!(bends, 1, "one knee per unit");
                assert!((y[1] - first).abs() < tol, "flat before the knee");
            }
            // non-degrading channels stay flat
            assert!(t.sensors.iter().all(|r| r[0] == t.sensors[0][0]));
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SyntheticSpec {
            life_range: (5, 50),
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(DataError::InvalidSpec(_))));
    }
}
