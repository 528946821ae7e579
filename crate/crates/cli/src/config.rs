//! Run configuration: key-value TOML file plus command-line overrides.
//!
//! Every pipeline stage runs from a fully resolved [`RunConfig`]. All
//! randomness flows from the single root `seed` through named substreams
//! (`data`, `init`, `train`, `sampling`); the derived seeds are resolved
//! into the config before any stage runs and persisted beside the outputs,
//! so a run can be reproduced from its `config.resolved.toml` alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flowcast::data::GenConfig;
use flowcast::error::{Error, Result};
use flowcast::model::{ModelDims, TrainConfig};
use flowcast::rng::derive_seed;
use flowcast::sampler::SamplerConfig;

/// Model architecture knobs; the input dimension comes from the data config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub flow_layers: usize,
    pub cond_hidden: usize,
    pub scale_cap: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 64, flow_layers: 4, cond_hidden: 64, scale_cap: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Conditioning frames M and forecast frames N.
    pub horizon: [usize; 2],
    /// Trajectories sampled per window (D).
    pub samples: usize,
    /// Samples kept for the diversity-fidelity metrics (C).
    pub keep: usize,
    /// Test windows to evaluate; 0 means all.
    pub eval_windows: usize,
    pub density_points: usize,
    /// Trajectory-level or per-timestep energy distance.
    pub energy_distance_mode: flowcast::metrics::EnergyDistanceMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizon: [10, 14],
            samples: 100,
            keep: 20,
            eval_windows: 0,
            density_points: 256,
            energy_distance_mode: flowcast::metrics::EnergyDistanceMode::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; substream seeds below are derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/out"),
            data: GenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Derive substream seeds from the root seed and sanity-check the
    /// combination. Idempotent.
    pub fn resolve(mut self) -> Result<RunConfig> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(
                "seed must fit a TOML integer (at most 2^63 - 1)".into(),
            ));
        }
        self.data.seed = derive_seed(self.seed, "data");
        self.train.seed = derive_seed(self.seed, "train");
        self.sampler.seed = derive_seed(self.seed, "sampling");

        let [m, n] = self.eval.horizon;
        if m == 0 || n == 0 {
            return Err(Error::Config("eval.horizon entries must be positive".into()));
        }
        if m + n > self.data.total_frames() {
            return Err(Error::Config(format!(
                "horizon {}+{} exceeds sequence length {}",
                m,
                n,
                self.data.total_frames()
            )));
        }
        if self.eval.samples == 0 || self.eval.keep == 0 || self.eval.keep > self.eval.samples {
            return Err(Error::Config(format!(
                "eval.keep ({}) must be in 1..=eval.samples ({})",
                self.eval.keep, self.eval.samples
            )));
        }
        if self.model.flow_layers < 2 {
            return Err(Error::Config("model.flow_layers must be at least 2".into()));
        }
        Ok(self)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input: self.data.frame_dim(),
            hidden: self.model.hidden,
            flow_layers: self.model.flow_layers,
            cond_hidden: self.model.cond_hidden,
            scale_cap: self.model.scale_cap,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Write the resolved config beside a stage's outputs.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.resolved.toml"), self.to_toml())?;
        Ok(())
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    // Try the raw text as a TOML literal first; fall back to a string.
    let attempt = format!("v = {}", raw);
    if let Ok(table) = attempt.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override path '{}'", path)));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!("override path '{}' crosses a non-table value", path))
            })?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Load a config file (optional), apply `--set key=value` overrides, then
/// dedicated flags, and resolve. Flags take precedence over the file.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    horizon: Option<[usize; 2]>,
) -> Result<RunConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let content = fs::read_to_string(p)?;
            content
                .parse()
                .map_err(|e| Error::Config(format!("{}: {}", p.display(), e)))?
        }
        None => toml::Table::new(),
    };
    for entry in sets {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{}'", entry)))?;
        apply_override(&mut table, key.trim(), parse_toml_value(value.trim()))?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("invalid config: {}", e)))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = out_dir {
        cfg.out_dir = dir;
    }
    if let Some(h) = horizon {
        cfg.eval.horizon = h;
    }
    cfg.resolve()
}
