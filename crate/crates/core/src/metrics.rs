//! Evaluation: energy distance, APD/MAE, top-C selection, pooled-normalized
//! diversity-fidelity ratios, and kernel density curves.
//!
//! All metrics operate in keypoint space on flattened N×d trajectories.
//! Energy distance uses the V-statistic (all pairs, diagonal included) with
//! distance lists summed in sorted order, which makes E(X,X) exactly zero
//! and E(X,Y) bit-identical to E(Y,X).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to normalized MAE before ratio division. Pooled min-max
/// normalization sends exactly one window's MAE to zero; the floor keeps
/// that window's ratio bounded (at most 100× its normalized APD) instead of
/// letting one denominator dominate a model's mean.
pub const NORM_MAE_FLOOR: f64 = 1e-2;

/// A set of sampled future trajectories for one conditioning window.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub window_id: String,
    /// "plain" or "refined".
    pub model: String,
    /// D trajectories, each N×d.
    pub samples: Vec<Vec<Vec<f64>>>,
}

impl SampleSet {
    pub fn new(
        window_id: impl Into<String>,
        model: impl Into<String>,
        samples: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("SampleSet requires at least one trajectory"));
        }
        let n = samples[0].len();
        let d = samples[0].first().map_or(0, |f| f.len());
        if n == 0 || d == 0 {
            return Err(Error::contract("SampleSet trajectories must be non-empty"));
        }
        for (i, traj) in samples.iter().enumerate() {
            if traj.len() != n || traj.iter().any(|f| f.len() != d) {
                return Err(Error::shape(
                    "sample_set",
                    format!("trajectory {} does not match {}x{}", i, n, d),
                ));
            }
        }
        Ok(SampleSet { window_id: window_id.into(), model: model.into(), samples })
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn horizon(&self) -> usize {
        self.samples[0].len()
    }

    pub fn dim(&self) -> usize {
        self.samples[0][0].len()
    }

    pub fn flattened(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|t| flatten(t)).collect()
    }
}

pub fn flatten(trajectory: &[Vec<f64>]) -> Vec<f64> {
    trajectory.iter().flatten().copied().collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sum of all pairwise distances between `xs` and `ys`, accumulated in
/// sorted order so the result does not depend on which set came first.
fn pairwise_distance_sum(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            dists.push(euclidean(x, y));
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    dists.iter().sum()
}

/// Energy-distance V-statistic between two sets of equal-dimension vectors:
/// `2·E‖x−y‖ − E‖x−x′‖ − E‖y−y′‖` with all-pairs means.
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::contract("energy_distance: empty set"));
    }
    let d = xs[0].len();
    for v in xs.iter().chain(ys) {
        if v.len() != d {
            return Err(Error::shape(
                "energy_distance",
                format!("vector of length {} in sets of dimension {}", v.len(), d),
            ));
        }
    }
    let n = xs.len() as f64;
    let m = ys.len() as f64;
    let cross = pairwise_distance_sum(xs, ys) / (n * m);
    let within_x = pairwise_distance_sum(xs, xs) / (n * n);
    let within_y = pairwise_distance_sum(ys, ys) / (m * m);
    Ok(2.0 * cross - (within_x + within_y))
}

/// Mean absolute error over all N×d entries.
pub fn mae(sample: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if sample.len() != truth.len()
        || sample.iter().zip(truth).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::shape("mae", "sample and truth trajectories differ"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (fs, ft) in sample.iter().zip(truth) {
        for (a, b) in fs.iter().zip(ft) {
            total += (a - b).abs();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Average pairwise Euclidean distance between flattened trajectories.
pub fn apd(samples: &[Vec<Vec<f64>>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::contract("apd requires at least 2 samples"));
    }
    let flat: Vec<Vec<f64>> = samples.iter().map(|t| flatten(t)).collect();
    let n = flat.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += euclidean(&flat[i], &flat[j]);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Keep the `c` samples with lowest MAE against `truth`; ties broken by
/// sample index (lower wins).
pub fn select_top_c(set: &SampleSet, truth: &[Vec<f64>], c: usize) -> Result<SampleSet> {
    if c == 0 || c > set.count() {
        return Err(Error::contract(format!(
            "select_top_c: c={} out of range for {} samples",
            c,
            set.count()
        )));
    }
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(set.count());
    for (i, traj) in set.samples.iter().enumerate() {
        scored.push((mae(traj, truth)?, i));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = scored[..c].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();
    Ok(SampleSet {
        window_id: set.window_id.clone(),
        model: set.model.clone(),
        samples: keep.into_iter().map(|i| set.samples[i].clone()).collect(),
    })
}

/// How a window's energy distance treats the time axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyDistanceMode {
    /// Sets of whole trajectories flattened to N·d vectors (default).
    #[default]
    Trajectory,
    /// Per-timestep frame sets, averaged over the horizon.
    PerTimestep,
}

/// Energy distance between a sample set and the truth trajectory under the
/// chosen mode.
pub fn sample_energy_distance(
    set: &SampleSet,
    truth: &[Vec<f64>],
    mode: EnergyDistanceMode,
) -> Result<f64> {
    match mode {
        EnergyDistanceMode::Trajectory => energy_distance(&set.flattened(), &[flatten(truth)]),
        EnergyDistanceMode::PerTimestep => {
            if truth.len() != set.horizon() {
                return Err(Error::shape(
                    "sample_energy_distance",
                    format!("truth length {} vs horizon {}", truth.len(), set.horizon()),
                ));
            }
            let mut total = 0.0;
            for t in 0..set.horizon() {
                let frames: Vec<Vec<f64>> =
                    set.samples.iter().map(|traj| traj[t].clone()).collect();
                total += energy_distance(&frames, &[truth[t].clone()])?;
            }
            Ok(total / set.horizon() as f64)
        }
    }
}

/// Raw per-window metrics before pooled normalization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub window_id: String,
    pub energy_distance: f64,
    pub mae: f64,
    pub apd: f64,
}

/// Energy distance over the full sample set, MAE/APD over the top-C subset.
pub fn window_metrics(set: &SampleSet, truth: &[Vec<f64>], c: usize) -> Result<WindowMetrics> {
    window_metrics_with(set, truth, c, EnergyDistanceMode::Trajectory)
}

/// [`window_metrics`] with an explicit energy-distance mode.
pub fn window_metrics_with(
    set: &SampleSet,
    truth: &[Vec<f64>],
    c: usize,
    mode: EnergyDistanceMode,
) -> Result<WindowMetrics> {
    let ed = sample_energy_distance(set, truth, mode)?;
    let top = select_top_c(set, truth, c)?;
    let mut total = 0.0;
    for traj in &top.samples {
        total += mae(traj, truth)?;
    }
    let mean_mae = total / top.count() as f64;
    let diversity = if top.count() >= 2 { apd(&top.samples)? } else { 0.0 };
    Ok(WindowMetrics {
        window_id: set.window_id.clone(),
        energy_distance: ed,
        mae: mean_mae,
        apd: diversity,
    })
}

/// One window's normalized metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalizedWindow {
    pub window_id: String,
    pub energy_distance: f64,
    pub mae: f64,
    pub apd: f64,
    pub norm_mae: f64,
    pub norm_apd: f64,
    pub ratio: f64,
}

/// Per-model report after pooled min-max normalization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub windows: Vec<NormalizedWindow>,
    pub mean_energy_distance: f64,
    pub mean_mae: f64,
    pub mean_apd: f64,
    pub mean_norm_mae: f64,
    pub mean_norm_apd: f64,
    pub mean_ratio: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for v in values {
        total += v;
        count += 1;
    }
    total / count as f64
}

fn pooled_range(values: impl Iterator<Item = f64>, metric: &str) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // Also rejects NaN-poisoned ranges, which compare as not-greater.
    if matches!(hi.partial_cmp(&lo), Some(std::cmp::Ordering::Greater)) {
        Ok((lo, hi))
    } else {
        Err(Error::DegenerateRange { metric: metric.into() })
    }
}

/// Min-max normalize MAE and APD with global extrema pooled over BOTH
/// models' windows, then report per-window APD-to-MAE ratios and per-model
/// means. Both inputs must cover the same windows.
pub fn normalized_ratio_report(
    plain: &[WindowMetrics],
    refined: &[WindowMetrics],
) -> Result<(ModelReport, ModelReport)> {
    if plain.is_empty() || refined.is_empty() {
        return Err(Error::contract("normalized_ratio_report: empty metric list"));
    }
    let plain_ids: Vec<&str> = plain.iter().map(|w| w.window_id.as_str()).collect();
    let refined_ids: Vec<&str> = refined.iter().map(|w| w.window_id.as_str()).collect();
    if plain_ids != refined_ids {
        let missing: Vec<&&str> = plain_ids
            .iter()
            .filter(|id| !refined_ids.contains(id))
            .chain(refined_ids.iter().filter(|id| !plain_ids.contains(id)))
            .collect();
        return Err(Error::contract(format!(
            "normalized_ratio_report: window sets differ (unmatched: {:?})",
            missing
        )));
    }

    let all = plain.iter().chain(refined.iter());
    let (mae_lo, mae_hi) = pooled_range(all.clone().map(|w| w.mae), "mae")?;
    let (apd_lo, apd_hi) = pooled_range(all.map(|w| w.apd), "apd")?;

    let build = |rows: &[WindowMetrics], model: &str| -> ModelReport {
        let windows: Vec<NormalizedWindow> = rows
            .iter()
            .map(|w| {
                let norm_mae = (w.mae - mae_lo) / (mae_hi - mae_lo);
                let norm_apd = (w.apd - apd_lo) / (apd_hi - apd_lo);
                let ratio = norm_apd / norm_mae.max(NORM_MAE_FLOOR);
                NormalizedWindow {
                    window_id: w.window_id.clone(),
                    energy_distance: w.energy_distance,
                    mae: w.mae,
                    apd: w.apd,
                    norm_mae,
                    norm_apd,
                    ratio,
                }
            })
            .collect();
        ModelReport {
            model: model.into(),
            mean_energy_distance: mean(windows.iter().map(|w| w.energy_distance)),
            mean_mae: mean(windows.iter().map(|w| w.mae)),
            mean_apd: mean(windows.iter().map(|w| w.apd)),
            mean_norm_mae: mean(windows.iter().map(|w| w.norm_mae)),
            mean_norm_apd: mean(windows.iter().map(|w| w.norm_apd)),
            mean_ratio: mean(windows.iter().map(|w| w.ratio)),
            windows,
        }
    };

    Ok((build(plain, "plain"), build(refined, "refined")))
}

/// Gaussian KDE sampled at evenly spaced points over `[min-3b, max+3b]`,
/// bandwidth by Silverman's rule `b = σ̂ (4/(3n))^{1/5}`.
pub fn density_curve(values: &[f64], points: usize) -> Result<Vec<(f64, f64)>> {
    if values.len() < 2 {
        return Err(Error::contract("density_curve needs at least 2 values"));
    }
    if points < 2 {
        return Err(Error::contract("density_curve needs at least 2 grid points"));
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::contract(
            "density_curve: zero spread in values; use a histogram instead",
        ));
    }
    let bandwidth = var.sqrt() * (4.0 / (3.0 * n)).powf(0.2);

    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let curve = (0..points)
        .map(|i| {
            let x = lo + i as f64 * step;
            let density = values
                .iter()
                .map(|&v| {
                    let u = (x - v) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm;
            (x, density)
        })
        .collect();
    Ok(curve)
}
