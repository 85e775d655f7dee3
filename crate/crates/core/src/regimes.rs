//! Operating-regime discovery and per-regime sensor standardization.
//!
//! Operating settings are min-max scaled per dimension, clustered with
//! k-means (k-means++ seeding, several restarts), and each retained sensor is
//! standardized with the mean and population standard deviation of the
//! training rows in its cluster.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmapss::{Dataset, DatasetKind, N_SENSORS, N_SETTINGS};
use crate::seed::rng_for;

/// Sensors (1-based) kept for modelling; the remaining seven show no usable
/// degradation trend.
pub const DEFAULT_SENSORS: &[usize] = &[2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21];
pub const DROPPED_SENSORS: &[usize] = &[1, 5, 6, 10, 16, 18, 19];

/// Standard deviations below this are treated as zero.
pub const STD_EPSILON: f64 = 1e-8;

/// Cap on points used for silhouette scoring, which is quadratic in N.
pub const SILHOUETTE_SAMPLE: usize = 2000;

/// Mean silhouette a clustering must reach before k > 1 is preferred.
pub const SILHOUETTE_THRESHOLD: f64 = 0.5;

pub type Point = [f64; N_SETTINGS];

#[derive(Debug, Error)]
pub enum RegimeError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("k = {k} exceeds the number of points ({n})")]
    KExceedsN { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cluster {cluster} received {rows} training rows (need at least 2)")]
    DegenerateCluster { cluster: usize, rows: usize },
    #[error("invalid sensor selection: {0}")]
    InvalidSelection(String),
    #[error("series of length {len} is too short for window {window} and lag {max_lag}")]
    SeriesTooShort {
        len: usize,
        window: usize,
        max_lag: usize,
    },
    #[error("regime model file {path}: {reason}")]
    Persist { path: String, reason: String },
}

fn sq_dist(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Point>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub cost: f64,
    /// Cost after every assignment step of the winning restart.
    pub cost_history: Vec<f64>,
}

fn plus_plus_seeds<R: Rng>(points: &[Point], k: usize, rng: &mut R) -> Vec<Point> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Point], mut centroids: Vec<Point>, max_iter: usize) -> KMeansFit {
    let k = centroids.len();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut cost = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            cost += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if let Some(&prev) = history.last() {
            debug_assert!(cost <= prev + 1e-9 * prev.abs().max(1.0), "k-means cost increased");
        }
        history.push(cost);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; N_SETTINGS]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for d in 0..N_SETTINGS {
                sums[a][d] += p[d];
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                centroids[c] = std::array::from_fn(|d| sums[c][d] / counts[c] as f64);
            }
        }
    }
    hartigan(points, &mut centroids, &mut assignments, &mut history, max_iter);
    let cost = *history.last().unwrap();
    KMeansFit {
        centroids,
        assignments,
        cost,
        cost_history: history,
    }
}

fn means(points: &[Point], assignments: &[usize], centroids: &mut [Point]) -> (Vec<usize>, f64) {
    let k = centroids.len();
    let mut sums = vec![[0.0; N_SETTINGS]; k];
    let mut counts = vec![0usize; k];
    for (&a, p) in assignments.iter().zip(points) {
        counts[a] += 1;
        for d in 0..N_SETTINGS {
            sums[a][d] += p[d];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = std::array::from_fn(|d| sums[c][d] / counts[c] as f64);
        }
    }
    let cost = assignments.iter().zip(points).map(|(&a, p)| sq_dist(p, &centroids[a])).sum();
    (counts, cost)
}

/// Single-point transfers after Lloyd has converged: move a point whenever
/// that lowers the total cost, accounting for both centroids shifting. Every
/// local optimum of this search is also a Lloyd fixed point, and many Lloyd
/// fixed points are not local optima here.
fn hartigan(
    points: &[Point],
    centroids: &mut [Point],
    assignments: &mut [usize],
    history: &mut Vec<f64>,
    max_sweeps: usize,
) {
    let k = centroids.len();
    if k < 2 {
        return;
    }
    let (mut counts, mut cost) = means(points, assignments, centroids);
    for _ in 0..max_sweeps {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            let na = counts[a] as f64;
            if counts[a] < 2 {
                continue;
            }
            let removal = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let mut best = (a, removal);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let add = nb / (nb + 1.0) * sq_dist(p, &centroids[b]);
                if add < best.1 {
                    best = (b, add);
                }
            }
            let b = best.0;
            if b == a || best.1 >= removal * (1.0 - 1e-12) {
                continue;
            }
            let nb = counts[b] as f64;
            centroids[a] = std::array::from_fn(|d| (centroids[a][d] * na - p[d]) / (na - 1.0));
            centroids[b] = std::array::from_fn(|d| (centroids[b][d] * nb + p[d]) / (nb + 1.0));
            counts[a] -= 1;
            counts[b] += 1;
            assignments[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        let (c, new_cost) = means(points, assignments, centroids);
        counts = c;
        debug_assert!(new_cost <= cost + 1e-9 * cost.abs().max(1.0), "k-means cost increased");
        cost = new_cost;
        history.push(cost);
    }
}

pub fn kmeans_fit(points: &[Point], k: usize, seed: u64) -> Result<KMeansFit, RegimeError> {
    kmeans_fit_with(points, k, seed, KMeansOptions::default())
}

/// Lloyd's algorithm from k-means++ seeds, best of `n_init` restarts.
pub fn kmeans_fit_with(
    points: &[Point],
    k: usize,
    seed: u64,
    options: KMeansOptions,
) -> Result<KMeansFit, RegimeError> {
    if points.is_empty() {
        return Err(RegimeError::EmptyInput);
    }
    if k == 0 {
        return Err(RegimeError::ZeroK);
    }
    if k > points.len() {
        return Err(RegimeError::KExceedsN { k, n: points.len() });
    }
    let mut best: Option<KMeansFit> = None;
    for restart in 0..options.n_init.max(1) {
        let mut rng = rng_for(seed, "kmeans/restart", restart as u64);
        let seeds = plus_plus_seeds(points, k, &mut rng);
        let fit = lloyd(points, seeds, options.max_iter);
        if best.as_ref().map_or(true, |b| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

/// Mean silhouette coefficient. Points in singleton clusters score 0.
pub fn silhouette(points: &[Point], assignments: &[usize], k: usize) -> f64 {
    let n = points.len();
    if n == 0 || k < 2 {
        return 0.0;
    }
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let own = assignments[i];
        if counts[own] <= 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    total / n as f64
}

/// Pick k in `1..=k_max` by mean silhouette; k = 1 wins when no k >= 2
/// reaches [`SILHOUETTE_THRESHOLD`].
pub fn select_k(points: &[Point], k_max: usize, seed: u64) -> Result<usize, RegimeError> {
    if points.is_empty() {
        return Err(RegimeError::EmptyInput);
    }
    let sample: Vec<Point> = if points.len() > SILHOUETTE_SAMPLE {
        let mut rng = rng_for(seed, "select_k/sample", 0);
        let mut idx = index::sample(&mut rng, points.len(), SILHOUETTE_SAMPLE).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        points.to_vec()
    };
    let mut best = (1, f64::NEG_INFINITY);
    for k in 2..=k_max.min(sample.len()) {
        let fit = kmeans_fit(&sample, k, seed)?;
        let s = silhouette(&sample, &fit.assignments, k);
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(if best.1 >= SILHOUETTE_THRESHOLD { best.0 } else { 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorStats {
    pub mean: f64,
    pub std: f64,
    /// Set when `std < STD_EPSILON`; such values are only centred.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeModel {
    pub k: usize,
    /// Centroids in min-max scaled setting space.
    pub centroids: Vec<Point>,
    pub setting_min: Point,
    pub setting_span: Point,
    /// 1-based sensor numbers, in output column order.
    pub selected_sensors: Vec<usize>,
    /// `cluster_stats[cluster][j]` describes `selected_sensors[j]`.
    pub cluster_stats: Vec<Vec<SensorStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeOptions {
    /// Fixed number of clusters; chosen by silhouette when absent.
    pub k: Option<usize>,
    pub k_max: usize,
    pub sensors: Vec<usize>,
}

impl Default for RegimeOptions {
    fn default() -> Self {
        Self {
            k: None,
            k_max: 8,
            sensors: DEFAULT_SENSORS.to_vec(),
        }
    }
}

fn validate_sensors(sensors: &[usize]) -> Result<(), RegimeError> {
    if sensors.is_empty() {
        return Err(RegimeError::InvalidSelection("no sensors selected".into()));
    }
    let mut seen = [false; N_SENSORS + 1];
    for &s in sensors {
        if !(1..=N_SENSORS).contains(&s) {
            return Err(RegimeError::InvalidSelection(format!("sensor {s} is outside 1..=21")));
        }
        if std::mem::replace(&mut seen[s], true) {
            return Err(RegimeError::InvalidSelection(format!("sensor {s} listed twice")));
        }
    }
    Ok(())
}

/// Fit clusters and per-cluster statistics on a training set.
pub fn fit_regime_model(
    train: &Dataset,
    options: &RegimeOptions,
    seed: u64,
) -> Result<RegimeModel, RegimeError> {
    validate_sensors(&options.sensors)?;
    let raw: Vec<Point> = train
        .trajectories
        .iter()
        .flat_map(|t| t.op_settings.iter().copied())
        .collect();
    if raw.is_empty() {
        return Err(RegimeError::EmptyInput);
    }
    let mut lo = [f64::INFINITY; N_SETTINGS];
    let mut hi = [f64::NEG_INFINITY; N_SETTINGS];
    for p in &raw {
        for d in 0..N_SETTINGS {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span: Point = std::array::from_fn(|d| hi[d] - lo[d]);
    let scaled: Vec<Point> = raw.iter().map(|p| scale_point(p, &lo, &span)).collect();

    let k = match options.k {
        Some(k) => k,
        None => select_k(&scaled, options.k_max, seed)?,
    };
    let fit = kmeans_fit(&scaled, k, seed)?;

    let d = options.sensors.len();
    let mut sum = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    let rows = || {
        train
            .trajectories
            .iter()
            .flat_map(|t| t.sensors.iter())
            .zip(&fit.assignments)
    };
    for (row, &c) in rows() {
        counts[c] += 1;
        for (j, &s) in options.sensors.iter().enumerate() {
            sum[c][j] += row[s - 1];
        }
    }
    if let Some((cluster, &n)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
        return Err(RegimeError::DegenerateCluster { cluster, rows: n });
    }
    let means: Vec<Vec<f64>> = sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
        .collect();
    let mut sq = vec![vec![0.0; d]; k];
    for (row, &c) in rows() {
        for (j, &s) in options.sensors.iter().enumerate() {
            sq[c][j] += (row[s - 1] - means[c][j]).powi(2);
        }
    }
    let cluster_stats = (0..k)
        .map(|c| {
            (0..d)
                .map(|j| {
                    let std = (sq[c][j] / counts[c] as f64).sqrt();
                    SensorStats {
                        mean: means[c][j],
                        std,
                        degenerate: std < STD_EPSILON,
                    }
                })
                .collect()
        })
        .collect();
    Ok(RegimeModel {
        k,
        centroids: fit.centroids,
        setting_min: lo,
        setting_span: span,
        selected_sensors: options.sensors.clone(),
        cluster_stats,
    })
}

fn scale_point(p: &Point, lo: &Point, span: &Point) -> Point {
    std::array::from_fn(|d| if span[d] > 0.0 { (p[d] - lo[d]) / span[d] } else { 0.0 })
}

/// Sensor/cluster pair whose standard deviation was too small to divide by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DegenerateFlag {
    pub cluster: usize,
    pub sensor: usize,
}

/// Trajectory with sensors replaced by per-regime standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrajectory {
    pub unit_id: u32,
    pub cycles: Vec<u32>,
    pub op_settings: Vec<Point>,
    pub clusters: Vec<usize>,
    /// Row-major `len × d_features`.
    pub features: Vec<f64>,
    pub d_features: usize,
}

impl NormalizedTrajectory {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_features..(i + 1) * self.d_features]
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self {
            unit_id: self.unit_id,
            cycles: self.cycles[..len].to_vec(),
            op_settings: self.op_settings[..len].to_vec(),
            clusters: self.clusters[..len].to_vec(),
            features: self.features[..len * self.d_features].to_vec(),
            d_features: self.d_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDataset {
    pub kind: DatasetKind,
    pub sensors: Vec<usize>,
    pub trajectories: Vec<NormalizedTrajectory>,
    pub true_test_ruls: Option<BTreeMap<u32, u32>>,
    /// Degenerate pairs hit while normalizing, deduplicated and sorted.
    pub degenerate: Vec<DegenerateFlag>,
}

impl NormalizedDataset {
    pub fn d_features(&self) -> usize {
        self.sensors.len()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn true_rul(&self, unit_id: u32) -> Option<u32> {
        self.true_test_ruls.as_ref()?.get(&unit_id).copied()
    }
}

impl RegimeModel {
    pub fn d_features(&self) -> usize {
        self.selected_sensors.len()
    }

    /// Nearest centroid for a raw operating-setting row.
    pub fn assign(&self, settings: &Point) -> usize {
        let p = scale_point(settings, &self.setting_min, &self.setting_span);
        nearest(&p, &self.centroids).0
    }

    /// Standardize one raw row. Returns the cluster and the retained,
    /// normalized sensor values.
    pub fn normalize_row(&self, settings: &Point, sensors: &[f64; N_SENSORS]) -> (usize, Vec<f64>) {
        let c = self.assign(settings);
        let values = self
            .selected_sensors
            .iter()
            .zip(&self.cluster_stats[c])
            .map(|(&s, st)| {
                let centred = sensors[s - 1] - st.mean;
                if st.degenerate {
                    centred
                } else {
                    centred / st.std
                }
            })
            .collect();
        (c, values)
    }

    /// Standardize every row of `dataset` using this model's statistics.
    pub fn normalize(&self, dataset: &Dataset) -> NormalizedDataset {
        let d = self.d_features();
        let mut flags = std::collections::BTreeSet::new();
        let trajectories = dataset
            .trajectories
            .iter()
            .map(|t| {
                let mut features = Vec::with_capacity(t.len() * d);
                let mut clusters = Vec::with_capacity(t.len());
                for (settings, sensors) in t.op_settings.iter().zip(&t.sensors) {
                    let (c, row) = self.normalize_row(settings, sensors);
                    for (j, st) in self.cluster_stats[c].iter().enumerate() {
                        if st.degenerate {
                            flags.insert(DegenerateFlag {
                                cluster: c,
                                sensor: self.selected_sensors[j],
                            });
                        }
                    }
                    clusters.push(c);
                    features.extend(row);
                }
                NormalizedTrajectory {
                    unit_id: t.unit_id,
                    cycles: t.cycles.clone(),
                    op_settings: t.op_settings.clone(),
                    clusters,
                    features,
                    d_features: d,
                }
            })
            .collect();
        NormalizedDataset {
            kind: dataset.kind,
            sensors: self.selected_sensors.clone(),
            trajectories,
            true_test_ruls: dataset.true_test_ruls.clone(),
            degenerate: flags.into_iter().collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("regime model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegimeError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| RegimeError::Persist {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegimeError> {
        let path = path.as_ref();
        let persist = |reason: String| RegimeError::Persist {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| persist(e.to_string()))?;
        Self::from_json(&text).map_err(|e| persist(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub window_length: usize,
    pub rolling_means: Vec<f64>,
    /// Entry τ holds the lag-τ autocovariance, for τ in `0..=max_lag`.
    pub autocovariance_by_lag: Vec<f64>,
}

impl StationarityReport {
    pub fn autocovariance(&self, lag: usize) -> Option<f64> {
        self.autocovariance_by_lag.get(lag).copied()
    }
}

/// Rolling means and lag autocovariances of a series. The lag-τ value
/// averages `(y_t - ȳ)(y_{t+τ} - ȳ)` over the `n - τ` available pairs.
pub fn stationarity_diagnostics(
    series: &[f64],
    window_length: usize,
    max_lag: usize,
) -> Result<StationarityReport, RegimeError> {
    let n = series.len();
    if window_length == 0 || window_length > n || max_lag >= n {
        return Err(RegimeError::SeriesTooShort {
            len: n,
            window: window_length,
            max_lag,
        });
    }
    let rolling_means = series
        .windows(window_length)
        .map(|w| w.iter().sum::<f64>() / window_length as f64)
        .collect();
    let mean = series.iter().sum::<f64>() / n as f64;
    let autocovariance_by_lag = (0..=max_lag)
        .map(|lag| {
            let pairs = n - lag;
            (0..pairs)
                .map(|t| (series[t] - mean) * (series[t + lag] - mean))
                .sum::<f64>()
                / pairs as f64
        })
        .collect();
    Ok(StationarityReport {
        window_length,
        rolling_means,
        autocovariance_by_lag,
    })
}
