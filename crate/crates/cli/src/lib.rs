//! Pipeline commands behind the `flowcast` binary.
//!
//! Every command takes a resolved [`RunConfig`], writes its artifacts under
//! `config.out_dir`, and persists the config beside them. Outputs carry no
//! timestamps or machine state, so a rerun with the same config is
//! byte-identical.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flowcast::data::{self, DatasetSplit, Frames, KeypointSequence};
use flowcast::error::{Error, Result};
use flowcast::metrics::{self, ModelReport, SampleSet, WindowMetrics};
use flowcast::model::{self, GruNfModel, TrainRun};
use flowcast::parallel;
use flowcast::rng::derive_seed;
use flowcast::sampler::{self, SamplerConfig};

pub use config::{load_config, EvalConfig, ModelConfig, RunConfig};

/// Which sampler produced a sample file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Plain,
    Refined,
}

impl SampleMode {
    pub fn tag(self) -> &'static str {
        match self {
            SampleMode::Plain => "plain",
            SampleMode::Refined => "refined",
        }
    }
}

impl std::str::FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(SampleMode::Plain),
            "refined" => Ok(SampleMode::Refined),
            other => Err(Error::Config(format!(
                "unknown sample mode '{}' (expected plain|refined)",
                other
            ))),
        }
    }
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Format(format!("missing {} at '{}'", hint, path.display())));
    }
    Ok(())
}

pub fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("data")
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("checkpoint.bin")
}

pub fn samples_path(cfg: &RunConfig, mode: SampleMode) -> PathBuf {
    cfg.out_dir.join(format!("samples_{}.jsonl", mode.tag()))
}

/// Generate the dataset and write CSVs plus the JSON sidecar.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<DatasetSplit> {
    let split = data::gen_forked(&cfg.data)?;
    data::save_keypoints(&split, &data_dir(cfg))?;
    cfg.persist(&cfg.out_dir)?;
    Ok(split)
}

fn load_data(cfg: &RunConfig) -> Result<DatasetSplit> {
    let dir = data_dir(cfg);
    require_file(&dir.join("dataset.json"), "dataset (run `flowcast gen-data` first)")?;
    data::load_keypoints(&dir)
}

/// Train from the generated dataset; writes `checkpoint.bin` and
/// `loss_curve.csv`. On divergence the last finite checkpoint is retained
/// and the error is returned.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainRun> {
    let split = load_data(cfg)?;
    let init = GruNfModel::init(cfg.model_dims(), cfg.init_seed())?;
    let run = model::train(&init, &split.train, &split.val, &cfg.train)?;
    model::save_checkpoint(&run.model, &checkpoint_path(cfg))?;
    fs::write(cfg.out_dir.join("loss_curve.csv"), model::curve_to_csv(&run.curve))?;
    cfg.persist(&cfg.out_dir)?;
    if let Some(epoch) = run.diverged_at {
        return Err(Error::Diverged {
            epoch,
            msg: "non-finite loss; last finite checkpoint retained".into(),
        });
    }
    Ok(run)
}

/// One sampled trajectory, as written to the JSONL sample files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub window_id: String,
    pub sample_id: usize,
    /// N frames of d values.
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DiagnosticsRecord {
    window_id: String,
    #[serde(flatten)]
    layer: sampler::LayerAggregate,
}

/// The evaluation windows: `(window_id, conditioning frames, truth frames)`.
pub fn eval_windows(
    split: &DatasetSplit,
    cfg: &RunConfig,
) -> Result<Vec<(String, Frames, Frames)>> {
    let [m, n] = cfg.eval.horizon;
    let take = if cfg.eval.eval_windows == 0 {
        split.test.len()
    } else {
        cfg.eval.eval_windows.min(split.test.len())
    };
    split.test[..take]
        .iter()
        .map(|seq| {
            let (window, truth) = data::window_split(seq, m, n)?;
            Ok((seq.id.clone(), window, truth))
        })
        .collect()
}

/// Sample every evaluation window with the requested mode and write one
/// JSONL record per trajectory (plus chain diagnostics for refined runs).
pub fn cmd_sample(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    mode: SampleMode,
) -> Result<Vec<SampleSet>> {
    let default_ckpt = checkpoint_path(cfg);
    let ckpt = checkpoint.unwrap_or(&default_ckpt);
    require_file(ckpt, "checkpoint (run `flowcast train` first)")?;
    let model = model::load_checkpoint(ckpt)?;
    let split = load_data(cfg)?;
    if model.dims.input != split.frame_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects dimension {} but dataset has {}",
            model.dims.input,
            split.frame_dim()
        )));
    }

    let windows = eval_windows(&split, cfg)?;
    let [_, n] = cfg.eval.horizon;
    let d = cfg.eval.samples;

    let mut sets = Vec::with_capacity(windows.len());
    let mut diag_lines = String::new();
    for (id, window, _) in &windows {
        // Per-window seeds are derived from the window id, so any subset of
        // windows samples identically.
        let seed = derive_seed(cfg.sampler.seed, id);
        match mode {
            SampleMode::Plain => {
                sets.push(model::sample_plain(&model, id, window, n, d, seed)?);
            }
            SampleMode::Refined => {
                let sampler_cfg = SamplerConfig { seed, ..cfg.sampler };
                let (set, diag) = sampler::sample_refined(&model, id, window, n, d, &sampler_cfg)?;
                for layer in diag.per_layer {
                    let record = DiagnosticsRecord { window_id: id.clone(), layer };
                    diag_lines.push_str(&serde_json::to_string(&record)?);
                    diag_lines.push('\n');
                }
                sets.push(set);
            }
        }
    }

    let mut out = String::new();
    for set in &sets {
        for (i, traj) in set.samples.iter().enumerate() {
            let record = SampleRecord {
                window_id: set.window_id.clone(),
                sample_id: i,
                values: traj.clone(),
            };
            out.push_str(&serde_json::to_string(&record)?);
            out.push('\n');
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(samples_path(cfg, mode), out)?;
    if mode == SampleMode::Refined {
        fs::write(cfg.out_dir.join("diagnostics_refined.jsonl"), diag_lines)?;
    }
    cfg.persist(&cfg.out_dir)?;
    Ok(sets)
}

/// Parse a JSONL sample file back into per-window sample sets, in file order.
pub fn read_samples(path: &Path, tag: &str) -> Result<Vec<SampleSet>> {
    require_file(path, "sample file")?;
    let content = fs::read_to_string(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<(usize, Frames)>> = BTreeMap::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: format!("{}: {}", path.display(), e),
        })?;
        if !grouped.contains_key(&record.window_id) {
            order.push(record.window_id.clone());
        }
        grouped
            .entry(record.window_id)
            .or_default()
            .push((record.sample_id, record.values));
    }
    let mut sets = Vec::with_capacity(order.len());
    for id in order {
        let mut entries = grouped.remove(&id).expect("grouped window");
        entries.sort_by_key(|(i, _)| *i);
        let samples: Vec<Vec<Vec<f64>>> = entries.into_iter().map(|(_, v)| v).collect();
        sets.push(SampleSet::new(id, tag, samples)?);
    }
    if sets.is_empty() {
        return Err(Error::Format(format!("no samples in '{}'", path.display())));
    }
    Ok(sets)
}

/// Per-model aggregates in the JSON summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub mean_energy_distance: f64,
    pub mean_mae: f64,
    pub mean_apd: f64,
    pub mean_norm_mae: f64,
    pub mean_norm_apd: f64,
    pub mean_ratio: f64,
}

impl From<&ModelReport> for ModelSummary {
    fn from(r: &ModelReport) -> Self {
        ModelSummary {
            mean_energy_distance: r.mean_energy_distance,
            mean_mae: r.mean_mae,
            mean_apd: r.mean_apd,
            mean_norm_mae: r.mean_norm_mae,
            mean_norm_apd: r.mean_norm_apd,
            mean_ratio: r.mean_ratio,
        }
    }
}

/// Refined-vs-plain deltas; positive means refined is better.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Improvement {
    /// Relative gain in mean APD-to-MAE ratio, percent.
    pub apd_mae_ratio_pct: f64,
    /// Relative reduction in mean energy distance, percent.
    pub energy_distance_pct: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub horizon: [usize; 2],
    pub windows: usize,
    pub samples_per_window: usize,
    pub keep: usize,
    pub plain: ModelSummary,
    pub refined: ModelSummary,
    pub improvement: Improvement,
}

fn relative_gain_pct(new: f64, base: f64) -> f64 {
    if new == base {
        0.0
    } else {
        (new - base) / base * 100.0
    }
}

fn metrics_csv(plain: &ModelReport, refined: &ModelReport) -> String {
    let mut out =
        String::from("window_id,model,energy_distance,mae,apd,norm_mae,norm_apd,ratio\n");
    for report in [plain, refined] {
        for w in &report.windows {
            let _ = writeln!(
                out,
                "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                w.window_id, report.model, w.energy_distance, w.mae, w.apd, w.norm_mae,
                w.norm_apd, w.ratio
            );
        }
    }
    out
}

fn density_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("x,density\n");
    for (x, density) in curve {
        let _ = writeln!(out, "{:.8e},{:.8e}", x, density);
    }
    out
}

/// Score both sample files against the ground-truth futures and write the
/// per-window CSV, JSON summary, and ratio density curves.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    plain_path: &Path,
    refined_path: &Path,
) -> Result<EvalSummary> {
    let split = load_data(cfg)?;
    let windows = eval_windows(&split, cfg)?;
    let truths: BTreeMap<&str, &Frames> =
        windows.iter().map(|(id, _, t)| (id.as_str(), t)).collect();

    let plain_sets = read_samples(plain_path, "plain")?;
    let refined_sets = read_samples(refined_path, "refined")?;
    let plain_ids: Vec<&str> = plain_sets.iter().map(|s| s.window_id.as_str()).collect();
    let refined_ids: Vec<&str> = refined_sets.iter().map(|s| s.window_id.as_str()).collect();
    if plain_ids != refined_ids {
        let unmatched: Vec<&&str> = plain_ids
            .iter()
            .filter(|id| !refined_ids.contains(id))
            .chain(refined_ids.iter().filter(|id| !plain_ids.contains(id)))
            .collect();
        return Err(Error::contract(format!(
            "sample files cover different windows: {:?}",
            unmatched
        )));
    }

    let score = |sets: &[SampleSet]| -> Result<Vec<WindowMetrics>> {
        let rows = parallel::map_indexed(sets.len(), |i| {
            let set = &sets[i];
            let truth = truths.get(set.window_id.as_str()).ok_or_else(|| {
                Error::contract(format!(
                    "no ground truth for window '{}' (horizon/eval_windows mismatch?)",
                    set.window_id
                ))
            })?;
            metrics::window_metrics_with(set, truth, cfg.eval.keep, cfg.eval.energy_distance_mode)
        });
        rows.into_iter().collect()
    };
    let plain_metrics = score(&plain_sets)?;
    let refined_metrics = score(&refined_sets)?;

    let (plain_report, refined_report) =
        metrics::normalized_ratio_report(&plain_metrics, &refined_metrics)?;

    let summary = EvalSummary {
        horizon: cfg.eval.horizon,
        windows: plain_report.windows.len(),
        samples_per_window: plain_sets[0].count(),
        keep: cfg.eval.keep,
        improvement: Improvement {
            apd_mae_ratio_pct: relative_gain_pct(
                refined_report.mean_ratio,
                plain_report.mean_ratio,
            ),
            energy_distance_pct: -relative_gain_pct(
                refined_report.mean_energy_distance,
                plain_report.mean_energy_distance,
            ),
        },
        plain: ModelSummary::from(&plain_report),
        refined: ModelSummary::from(&refined_report),
    };

    let reports = cfg.out_dir.join("reports");
    fs::create_dir_all(&reports)?;
    fs::write(reports.join("metrics.csv"), metrics_csv(&plain_report, &refined_report))?;
    fs::write(
        reports.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    for report in [&plain_report, &refined_report] {
        let ratios: Vec<f64> = report.windows.iter().map(|w| w.ratio).collect();
        match metrics::density_curve(&ratios, cfg.eval.density_points) {
            Ok(curve) => {
                let path = reports.join(format!("density_{}.csv", report.model));
                fs::write(path, density_csv(&curve))?;
            }
            Err(e) => log::warn!("skipping density curve for {}: {}", report.model, e),
        }
    }
    cfg.persist(&cfg.out_dir)?;
    Ok(summary)
}

/// End-to-end benchmark: gen-data → train → sample both modes → evaluate.
pub fn cmd_compare(cfg: &RunConfig) -> Result<EvalSummary> {
    cmd_gen_data(cfg).map_err(|e| e.in_stage("gen-data"))?;
    cmd_train(cfg).map_err(|e| e.in_stage("train"))?;
    cmd_sample(cfg, None, SampleMode::Plain).map_err(|e| e.in_stage("sample-plain"))?;
    cmd_sample(cfg, None, SampleMode::Refined).map_err(|e| e.in_stage("sample-refined"))?;
    cmd_evaluate(
        cfg,
        &samples_path(cfg, SampleMode::Plain),
        &samples_path(cfg, SampleMode::Refined),
    )
    .map_err(|e| e.in_stage("evaluate"))
}

/// Exit code category for an error: config 2, data 3, numeric 4, I/O 5.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. } | Error::Format(_) | Error::Contract(_) | Error::Shape { .. } => 3,
        Error::Numeric(_) | Error::Diverged { .. } | Error::DegenerateRange { .. } => 4,
        Error::Io(_) | Error::Json(_) => 5,
        Error::Stage { source, .. } => exit_code(source),
    }
}

// Re-exported for integration tests that need raw sequences.
pub fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    load_data(cfg)
}

pub fn truth_for(seq: &KeypointSequence, horizon: [usize; 2]) -> Result<Frames> {
    Ok(data::window_split(seq, horizon[0], horizon[1])?.1)
}
