//! Synthetic multimodal keypoint trajectories and keypoint-file I/O.
//!
//! The generator produces a desk-scale forked-motion task: every sequence
//! follows the same smooth dynamic — a keypoint ring translating at constant
//! velocity with sinusoidal articulation — until the branch frame, where the
//! heading rotates by one of `modes` mode-specific angles. Observation noise
//! is added on top. Per-sequence variation (start offset, articulation
//! phase, mode) comes from seeded per-sequence streams, so a dataset is a
//! pure function of its config.
//!
//! Values are quantized to 9 significant digits at generation time, which is
//! exactly the CSV print precision; saving and re-loading a split is
//! therefore lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// A list of frames, each a flattened `[kp0_x, kp0_y, kp1_x, ...]` vector.
pub type Frames = Vec<Vec<f64>>;

/// Time-ordered keypoint frames for one sequence; each frame has length `2K`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSequence {
    pub id: String,
    pub frames: Frames,
}

impl KeypointSequence {
    pub fn new(id: impl Into<String>, frames: Frames) -> Result<Self> {
        let id = id.into();
        if frames.len() < 2 {
            return Err(Error::contract(format!(
                "sequence '{}' needs at least 2 frames, got {}",
                id,
                frames.len()
            )));
        }
        let d = frames[0].len();
        if d == 0 || !d.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "sequence '{}' has frame dimension {}, expected a positive even value",
                id, d
            )));
        }
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != d {
                return Err(Error::contract(format!(
                    "sequence '{}' frame {} has {} values, expected {}",
                    id,
                    t,
                    frame.len(),
                    d
                )));
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "sequence '{}' frame {} contains a non-finite value",
                    id, t
                )));
            }
        }
        Ok(KeypointSequence { id, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }
}

/// Generator parameters; persisted verbatim as the dataset's JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Keypoints per frame; the frame dimension is twice this.
    pub keypoints: usize,
    /// Frames before the branch.
    pub prefix_len: usize,
    /// Frames after the branch.
    pub suffix_len: usize,
    pub modes: usize,
    pub noise_std: f64,
    /// Largest branch rotation; modes spread evenly over ±this.
    pub branch_angle_deg: f64,
    /// Translation per frame.
    pub speed: f64,
    /// Base heading of the shared dynamic, radians.
    pub heading: f64,
    pub ring_radius: f64,
    pub articulation_amp: f64,
    pub articulation_period: f64,
    /// Uniform start-offset half-width.
    pub start_jitter: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            train: 1000,
            val: 100,
            test: 100,
            keypoints: 5,
            prefix_len: 10,
            suffix_len: 14,
            modes: 2,
            noise_std: 0.02,
            branch_angle_deg: 45.0,
            speed: 0.035,
            heading: 0.4,
            ring_radius: 0.2,
            articulation_amp: 0.04,
            articulation_period: 12.0,
            start_jitter: 0.25,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn total_frames(&self) -> usize {
        self.prefix_len + self.suffix_len
    }

    pub fn frame_dim(&self) -> usize {
        2 * self.keypoints
    }

    fn validate(&self) -> Result<()> {
        if self.modes < 2 {
            return Err(Error::contract("gen_forked: modes must be >= 2"));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::contract("gen_forked: split counts must be positive"));
        }
        if self.keypoints == 0 || self.prefix_len == 0 || self.suffix_len == 0 {
            return Err(Error::contract(
                "gen_forked: keypoints, prefix_len and suffix_len must be positive",
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::contract("gen_forked: noise_std must be >= 0"));
        }
        Ok(())
    }
}

/// Train/validation/test sequences plus the generator spec that made them.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<KeypointSequence>,
    pub val: Vec<KeypointSequence>,
    pub test: Vec<KeypointSequence>,
    pub spec: GenConfig,
}

impl DatasetSplit {
    pub fn frame_dim(&self) -> usize {
        self.spec.frame_dim()
    }
}

/// Round to 9 significant digits — the CSV print precision — so in-memory
/// values and their file representation are interchangeable.
pub fn quantize(v: f64) -> f64 {
    format!("{:.8e}", v).parse().expect("formatted float parses")
}

/// Generate the forked-trajectory dataset.
pub fn gen_forked(cfg: &GenConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let mut counter = 0u64;
    let mut make = |name: &str, count: usize| -> Vec<KeypointSequence> {
        (0..count)
            .map(|i| {
                let seq = gen_sequence(cfg, counter, name, i);
                counter += 1;
                seq
            })
            .collect()
    };
    Ok(DatasetSplit {
        train: make("train", cfg.train),
        val: make("val", cfg.val),
        test: make("test", cfg.test),
        spec: cfg.clone(),
    })
}

/// Branch rotations, evenly spread over ±branch_angle_deg.
pub fn mode_angles(cfg: &GenConfig) -> Vec<f64> {
    let max = cfg.branch_angle_deg.to_radians();
    (0..cfg.modes)
        .map(|m| -max + 2.0 * max * m as f64 / (cfg.modes - 1) as f64)
        .collect()
}

fn gen_sequence(cfg: &GenConfig, stream: u64, split: &str, index: usize) -> KeypointSequence {
    let mut rng = stream_rng(cfg.seed, stream);
    let k = cfg.keypoints;
    let d = cfg.frame_dim();
    let total = cfg.total_frames();

    // Per-sequence draws, in fixed order.
    let c0 = [
        rng.gen_range(-cfg.start_jitter..cfg.start_jitter),
        rng.gen_range(-cfg.start_jitter..cfg.start_jitter),
    ];
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mode = rng.gen_range(0..cfg.modes);

    let v = [cfg.heading.cos() * cfg.speed, cfg.heading.sin() * cfg.speed];
    let branch = mode_angles(cfg)[mode];
    let v_mode = [
        v[0] * branch.cos() - v[1] * branch.sin(),
        v[0] * branch.sin() + v[1] * branch.cos(),
    ];

    let omega = std::f64::consts::TAU / cfg.articulation_period;
    let mut frames = Vec::with_capacity(total);
    let mut center = c0;
    for t in 0..total {
        if t > 0 {
            let step = if t < cfg.prefix_len { v } else { v_mode };
            center[0] += step[0];
            center[1] += step[1];
        }
        let mut frame = Vec::with_capacity(d);
        for j in 0..k {
            let spoke = std::f64::consts::TAU * j as f64 / k as f64;
            let wobble = cfg.articulation_amp * (omega * t as f64 + phase + spoke).sin();
            // Ring offset plus tangential articulation.
            let x = center[0] + cfg.ring_radius * spoke.cos() - wobble * spoke.sin();
            let y = center[1] + cfg.ring_radius * spoke.sin() + wobble * spoke.cos();
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            frame.push(quantize(x + cfg.noise_std * nx));
            frame.push(quantize(y + cfg.noise_std * ny));
        }
        frames.push(frame);
    }
    KeypointSequence {
        id: format!("{}-{:05}-m{}", split, index, mode),
        frames,
    }
}

/// Conditioning window (first `m` frames) and ground-truth future (next `n`).
pub fn window_split(
    seq: &KeypointSequence,
    m: usize,
    n: usize,
) -> Result<(Frames, Frames)> {
    if m == 0 || n == 0 {
        return Err(Error::contract("window_split: m and n must be positive"));
    }
    if seq.len() < m + n {
        return Err(Error::contract(format!(
            "window_split: sequence '{}' has {} frames, need {}",
            seq.id,
            seq.len(),
            m + n
        )));
    }
    Ok((seq.frames[..m].to_vec(), seq.frames[m..m + n].to_vec()))
}

fn csv_header(k: usize) -> String {
    let mut header = String::from("seq_id,frame");
    for j in 0..k {
        let _ = write!(header, ",kp{}_x,kp{}_y", j, j);
    }
    header
}

/// Serialize sequences to CSV with 9-significant-digit floats.
pub fn write_csv(sequences: &[KeypointSequence], k: usize) -> Result<String> {
    let mut out = csv_header(k);
    out.push('\n');
    for seq in sequences {
        if seq.id.contains(',') || seq.id.contains('\n') {
            return Err(Error::Format(format!("sequence id '{}' not CSV-safe", seq.id)));
        }
        if seq.dim() != 2 * k {
            return Err(Error::shape(
                "write_csv",
                format!("sequence '{}' dim {} vs header dim {}", seq.id, seq.dim(), 2 * k),
            ));
        }
        for (t, frame) in seq.frames.iter().enumerate() {
            let _ = write!(out, "{},{}", seq.id, t);
            for v in frame {
                let _ = write!(out, ",{:.8e}", v);
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parse sequences from CSV, with 1-based line numbers in every error.
pub fn parse_csv(content: &str) -> Result<Vec<KeypointSequence>> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "seq_id" || cols[1] != "frame" || !(cols.len() - 2).is_multiple_of(2) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unrecognized header '{}'", header),
        });
    }
    let d = cols.len() - 2;

    let mut sequences: Vec<KeypointSequence> = Vec::new();
    let mut current: Option<(String, Frames)> = None;
    let mut seen: Vec<String> = Vec::new();

    let finish = |current: &mut Option<(String, Frames)>,
                  sequences: &mut Vec<KeypointSequence>,
                  line: usize|
     -> Result<()> {
        if let Some((id, frames)) = current.take() {
            let seq = KeypointSequence::new(id, frames)
                .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            sequences.push(seq);
        }
        Ok(())
    };

    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {} (ragged row)", d + 2, fields.len()),
            });
        }
        let id = fields[0].to_string();
        let frame_idx: usize = fields[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad frame index '{}'", fields[1]),
        })?;
        let mut frame = Vec::with_capacity(d);
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad float '{}'", f),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value '{}'", f),
                });
            }
            frame.push(v);
        }

        let start_new = match &current {
            Some((cur_id, _)) => *cur_id != id,
            None => true,
        };
        if start_new {
            finish(&mut current, &mut sequences, line)?;
            if seen.contains(&id) {
                return Err(Error::Parse {
                    line,
                    msg: format!("sequence '{}' appears in disjoint blocks", id),
                });
            }
            seen.push(id.clone());
            if frame_idx != 0 {
                return Err(Error::Parse {
                    line,
                    msg: format!("sequence '{}' starts at frame {}, expected 0", id, frame_idx),
                });
            }
            current = Some((id, vec![frame]));
        } else {
            let (_, frames) = current.as_mut().expect("current sequence");
            if frame_idx != frames.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!(
                        "sequence '{}' frame {} out of order, expected {}",
                        id,
                        frame_idx,
                        frames.len()
                    ),
                });
            }
            frames.push(frame);
        }
    }
    let last_line = content.lines().count();
    finish(&mut current, &mut sequences, last_line)?;
    if sequences.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no sequences in file".into() });
    }
    Ok(sequences)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    generator: String,
    spec: GenConfig,
    counts: [usize; 3],
}

/// Write a split as `train.csv`, `val.csv`, `test.csv` plus `dataset.json`
/// under `dir`.
pub fn save_keypoints(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let k = split.spec.keypoints;
    for (name, seqs) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        fs::write(dir.join(format!("{}.csv", name)), write_csv(seqs, k)?)?;
    }
    let sidecar = Sidecar {
        generator: "forked".into(),
        spec: split.spec.clone(),
        counts: [split.train.len(), split.val.len(), split.test.len()],
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Load a split previously written by [`save_keypoints`].
pub fn load_keypoints(dir: &Path) -> Result<DatasetSplit> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    let mut parts = Vec::new();
    for name in ["train", "val", "test"] {
        let path = dir.join(format!("{}.csv", name));
        let content = fs::read_to_string(&path)?;
        let seqs = parse_csv(&content)
            .map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
        parts.push(seqs);
    }
    let test = parts.pop().expect("test part");
    let val = parts.pop().expect("val part");
    let train = parts.pop().expect("train part");

    let d = sidecar.spec.frame_dim();
    for seq in train.iter().chain(&val).chain(&test) {
        if seq.dim() != d {
            return Err(Error::Format(format!(
                "sequence '{}' has dim {}, sidecar says {}",
                seq.id,
                seq.dim(),
                d
            )));
        }
    }
    Ok(DatasetSplit { train, val, test, spec: sidecar.spec })
}
