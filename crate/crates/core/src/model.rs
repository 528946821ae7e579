//! The composite sequence model: GRU encoder + conditional flow head.
//!
//! Training is teacher-forced exact maximum likelihood: the hidden state is
//! driven by ground-truth frames and each step contributes
//! `-log p(y_t | h_t)` plus an auxiliary `β‖readout(h_t) - y_t‖²` term that
//! trains the readout anchor. Inference is free-running: each trajectory
//! feeds its own generated frame back into the GRU.
//!
//! Checkpoints are self-describing little-endian binaries; parameters are
//! stored in one canonical order shared with the trainer and the gradient
//! checks.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::KeypointSequence;
use crate::error::{Error, Result};
use crate::flow::{self, FlowParamNodes, FlowStack, LN_2PI};
use crate::metrics::SampleSet;
use crate::numeric::matrix::DenseMatrix;
use crate::numeric::tape::{NodeId, Tape};
use crate::parallel;
use crate::recurrent::{self, GruParamNodes, GruParams, GruState};
use crate::rng::stream_rng;

const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Model dimensions, fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Frame dimension d (2 × keypoints).
    pub input: usize,
    /// GRU hidden size.
    pub hidden: usize,
    /// Number of coupling layers.
    pub flow_layers: usize,
    /// Conditioner hidden width.
    pub cond_hidden: usize,
    /// Scale bound for coupling layers.
    pub scale_cap: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { input: 10, hidden: 64, flow_layers: 4, cond_hidden: 64, scale_cap: 2.0 }
    }
}

/// Training provenance carried inside checkpoints.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: u32,
    pub final_nll: f64,
    pub seed: u64,
}

// final_nll is NaN until a model has been trained; compare it bitwise so
// checkpoint roundtrips of untrained models still compare equal.
impl PartialEq for TrainMeta {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.seed == other.seed
            && self.final_nll.to_bits() == other.final_nll.to_bits()
    }
}

impl Default for TrainMeta {
    fn default() -> Self {
        TrainMeta { epochs: 0, final_nll: f64::NAN, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruNfModel {
    pub gru: GruParams,
    pub flow: FlowStack,
    pub dims: ModelDims,
    pub meta: TrainMeta,
}

impl GruNfModel {
    /// Fresh model: GRU uniform(-1/√H, 1/√H), flow at identity.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let gru = GruParams::init(dims.input, dims.hidden, &mut rng);
        let flow = FlowStack::init(
            dims.input,
            dims.flow_layers,
            dims.cond_hidden,
            dims.hidden,
            dims.scale_cap,
            &mut rng,
        )?;
        Ok(GruNfModel { gru, flow, dims, meta: TrainMeta { seed, ..TrainMeta::default() } })
    }

    /// Fully random small parameters, including conditioner output layers.
    /// Gradient checks use this so no gradient is structurally zero.
    pub fn init_dense_random(dims: ModelDims, seed: u64, amp: f64) -> Result<Self> {
        let mut model = Self::init(dims, seed)?;
        let mut rng = stream_rng(seed, 1);
        for layer in &mut model.flow.layers {
            for net in [&mut layer.scale_net, &mut layer.shift_net] {
                for m in [&mut net.w2, &mut net.b2] {
                    let (r, c) = m.shape();
                    let vals: Vec<f64> =
                        (0..r * c).map(|_| rng.gen_range(-amp..amp)).collect();
                    *m = DenseMatrix::new_unchecked(r, c, vals);
                }
            }
        }
        Ok(model)
    }

    /// All parameters zero: identity flow, constant-zero GRU and readout.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Ok(GruNfModel {
            gru: GruParams::zeros(dims.input, dims.hidden),
            flow: FlowStack::zeros(
                dims.input,
                dims.flow_layers,
                dims.cond_hidden,
                dims.hidden,
                dims.scale_cap,
            )?,
            dims,
            meta: TrainMeta::default(),
        })
    }

    /// Parameter shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<(usize, usize)> =
            self.gru.ordered().iter().map(|m| m.shape()).collect();
        for layer in &self.flow.layers {
            for m in layer.scale_net.ordered().iter().chain(layer.shift_net.ordered().iter()) {
                shapes.push(m.shape());
            }
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|&(r, c)| r * c).sum()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for m in self.gru.ordered() {
            flat.extend_from_slice(m.as_slice());
        }
        for layer in &self.flow.layers {
            for m in layer.scale_net.ordered().iter().chain(layer.shift_net.ordered().iter()) {
                flat.extend_from_slice(m.as_slice());
            }
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(
                "set_params",
                format!("{} values for {} parameters", flat.len(), self.param_count()),
            ));
        }
        let mut offset = 0;
        let mut assign = |m: &mut DenseMatrix| {
            let len = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        };
        for m in self.gru.ordered_mut() {
            assign(m);
        }
        for layer in &mut self.flow.layers {
            for m in layer.scale_net.ordered_mut() {
                assign(m);
            }
            for m in layer.shift_net.ordered_mut() {
                assign(m);
            }
        }
        Ok(())
    }
}

/// Tape handles for every model parameter, canonical order.
pub struct ModelParamNodes {
    pub gru: GruParamNodes,
    pub flow: FlowParamNodes,
    pub ids: Vec<NodeId>,
}

pub fn register_params(model: &GruNfModel, tape: &mut Tape) -> ModelParamNodes {
    let mut ids: Vec<NodeId> = Vec::new();
    for m in model.gru.ordered() {
        ids.push(tape.leaf(m.clone()));
    }
    for layer in &model.flow.layers {
        for m in layer.scale_net.ordered().iter().chain(layer.shift_net.ordered().iter()) {
            ids.push(tape.leaf((*m).clone()));
        }
    }
    ModelParamNodes {
        gru: GruParamNodes::from_ids(&ids[..11]),
        flow: FlowParamNodes::from_ids(model.flow.n_layers(), &ids[11..]),
        ids,
    }
}

/// Build the same nodes from externally supplied leaves (gradient checks).
pub fn param_nodes_from_ids(n_layers: usize, ids: &[NodeId]) -> ModelParamNodes {
    ModelParamNodes {
        gru: GruParamNodes::from_ids(&ids[..11]),
        flow: FlowParamNodes::from_ids(n_layers, &ids[11..]),
        ids: ids.to_vec(),
    }
}

/// Teacher-forced negative log-likelihood of one sequence, averaged per
/// timestep, including the auxiliary readout term weighted by `beta`.
pub fn nll_loss(model: &GruNfModel, seq: &KeypointSequence, beta: f64) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::contract("nll_loss: sequence length must be >= 2"));
    }
    if seq.dim() != model.dims.input {
        return Err(Error::shape(
            "nll_loss",
            format!("sequence dim {} vs model dim {}", seq.dim(), model.dims.input),
        ));
    }
    let mut h = GruState::zeros(model.dims.hidden);
    let mut total = 0.0;
    for t in 1..seq.len() {
        h = recurrent::gru_cell(&seq.frames[t - 1], &h, &model.gru)?;
        let lp = flow::log_prob(&seq.frames[t], &h, &model.flow)?;
        total -= lp;
        if beta != 0.0 {
            let pred = recurrent::readout(&h, &model.gru)?;
            let sq: f64 = pred
                .iter()
                .zip(&seq.frames[t])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += beta * sq;
        }
    }
    let loss = total / (seq.len() - 1) as f64;
    if !loss.is_finite() {
        return Err(Error::numeric(format!(
            "nll_loss: non-finite loss on sequence '{}'",
            seq.id
        )));
    }
    Ok(loss)
}

/// Mean per-sequence NLL over a dataset slice.
pub fn dataset_nll(model: &GruNfModel, seqs: &[KeypointSequence], beta: f64) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::contract("dataset_nll: empty dataset"));
    }
    let mut total = 0.0;
    for seq in seqs {
        total += nll_loss(model, seq, beta)?;
    }
    Ok(total / seqs.len() as f64)
}

/// Taped batch loss: mean over `batch` sequences and timesteps of the same
/// quantity `nll_loss` computes. All sequences must share one length.
pub fn batch_loss_taped(
    tape: &mut Tape,
    model: &GruNfModel,
    nodes: &ModelParamNodes,
    batch: &[&KeypointSequence],
    beta: f64,
) -> Result<NodeId> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::contract("batch_loss: empty batch"));
    }
    let t_len = batch[0].len();
    if t_len < 2 || batch.iter().any(|s| s.len() != t_len) {
        return Err(Error::contract("batch_loss: sequences must share a length >= 2"));
    }
    let d = model.dims.input;

    let frame_matrix = |t: usize| -> Result<DenseMatrix> {
        let cols: Vec<&[f64]> = batch.iter().map(|s| s.frames[t].as_slice()).collect();
        DenseMatrix::from_columns(&cols)
    };

    let mut h = tape.leaf(DenseMatrix::zeros(model.dims.hidden, b));
    let mut acc: Option<NodeId> = None;
    for t in 1..t_len {
        let y_prev = tape.leaf(frame_matrix(t - 1)?);
        h = recurrent::gru_cell_taped(tape, &nodes.gru, y_prev, h)?;
        let y_t = tape.leaf(frame_matrix(t)?);
        let (z, logdet) = flow::forward_taped(tape, &model.flow, &nodes.flow, y_t, h)?;
        let sq = tape.dot(z, z)?;
        let half_sq = tape.affine_scalar(sq, 0.5, 0.0);
        let neg_ld = tape.affine_scalar(logdet, -1.0, 0.0);
        let mut step = tape.add(half_sq, neg_ld)?;
        if beta != 0.0 {
            let pred = recurrent::readout_taped(tape, &nodes.gru, h)?;
            let err = tape.sub(pred, y_t)?;
            let aux = tape.dot(err, err)?;
            let weighted = tape.affine_scalar(aux, beta, 0.0);
            step = tape.add(step, weighted)?;
        }
        acc = Some(match acc {
            None => step,
            Some(prev) => tape.add(prev, step)?,
        });
    }
    let total = acc.expect("at least one step");
    // Normalize and add back the Gaussian constant d/2·ln(2π) per step.
    let scale = 1.0 / (b as f64 * (t_len - 1) as f64);
    Ok(tape.affine_scalar(total, scale, 0.5 * d as f64 * LN_2PI))
}

/// Optimizer and schedule for [`train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the auxiliary readout MSE term.
    pub beta_aux: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta_aux: 0.5,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.grad_clip <= 0.0 || self.beta_aux < 0.0 {
            return Err(Error::Config(
                "learning_rate and grad_clip must be positive, beta_aux >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: GruNfModel,
    /// Epoch 0 holds the pre-training evaluation.
    pub curve: Vec<EpochStats>,
    /// Set when training aborted on a non-finite loss; `model` is then the
    /// last finite checkpoint.
    pub diverged_at: Option<usize>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0, lr }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn clip_global_norm(grads: &mut [f64], clip: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads {
            *g *= scale;
        }
    }
}

/// Teacher-forced maximum-likelihood training with Adam. Deterministic for a
/// fixed config: batch order comes from the config seed, and everything runs
/// single-threaded.
pub fn train(
    model: &GruNfModel,
    train_data: &[KeypointSequence],
    val_data: &[KeypointSequence],
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainRun { model: model.clone(), curve: Vec::new(), diverged_at: None });
    }
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::contract("train: empty train or validation set"));
    }
    let t_len = train_data[0].len();
    if train_data.iter().any(|s| s.len() != t_len) {
        return Err(Error::contract("train: all training sequences must share one length"));
    }

    let mut current = model.clone();
    let mut params = current.flatten_params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut rng = stream_rng(cfg.seed, 0);

    let mut curve = vec![EpochStats {
        epoch: 0,
        train_nll: dataset_nll(&current, train_data, cfg.beta_aux)?,
        val_nll: dataset_nll(&current, val_data, cfg.beta_aux)?,
    }];
    let mut last_finite = params.clone();
    let mut diverged_at = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&KeypointSequence> = chunk.iter().map(|&i| &train_data[i]).collect();
            let mut tape = Tape::new();
            let nodes = register_params(&current, &mut tape);
            let loss_node = batch_loss_taped(&mut tape, &current, &nodes, &batch, cfg.beta_aux)?;
            let loss = tape.value(loss_node).as_slice()[0];
            if !loss.is_finite() {
                log::warn!("training diverged at epoch {}: loss {}", epoch, loss);
                current.set_params(&last_finite)?;
                diverged_at = Some(epoch);
                break 'epochs;
            }
            last_finite.copy_from_slice(&params);

            let grads = tape.backward(loss_node, 1.0)?;
            let mut flat_grads = Vec::with_capacity(params.len());
            for &id in &nodes.ids {
                flat_grads.extend_from_slice(grads.get(id).as_slice());
            }
            clip_global_norm(&mut flat_grads, cfg.grad_clip);
            adam.update(&mut params, &flat_grads);
            current.set_params(&params)?;

            epoch_loss += loss;
            batches += 1;
        }
        let val_nll = dataset_nll(&current, val_data, cfg.beta_aux)?;
        curve.push(EpochStats { epoch, train_nll: epoch_loss / batches as f64, val_nll });
    }

    current.meta = TrainMeta {
        epochs: (curve.len() - 1) as u32,
        final_nll: curve.last().map(|s| s.val_nll).unwrap_or(f64::NAN),
        seed: cfg.seed,
    };
    Ok(TrainRun { model: current, curve, diverged_at })
}

/// Serialize a loss curve as `epoch,train_nll,val_nll` CSV.
pub fn curve_to_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_nll,val_nll\n");
    for row in curve {
        out.push_str(&format!("{},{:.8e},{:.8e}\n", row.epoch, row.train_nll, row.val_nll));
    }
    out
}

fn check_window(model: &GruNfModel, window: &[Vec<f64>], horizon: usize, count: usize) -> Result<()> {
    if window.is_empty() {
        return Err(Error::contract("sampling: empty conditioning window"));
    }
    if horizon == 0 || count == 0 {
        return Err(Error::contract("sampling: horizon and count must be positive"));
    }
    if window.iter().any(|f| f.len() != model.dims.input) {
        return Err(Error::shape(
            "sample",
            format!(
                "window frame dim {} vs model dim {}",
                window[0].len(),
                model.dims.input
            ),
        ));
    }
    Ok(())
}

fn rollout_plain(
    model: &GruNfModel,
    h0: &GruState,
    horizon: usize,
    seed: u64,
    traj: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream_rng(seed, traj as u64);
    let mut h = h0.clone();
    let mut frames = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let z: Vec<f64> = (0..model.dims.input).map(|_| rng.sample(StandardNormal)).collect();
        let y = flow::inverse(&z, &h, &model.flow)?;
        h = recurrent::gru_cell(&y, &h, &model.gru)?;
        frames.push(y);
    }
    Ok(frames)
}

fn collect_samples(
    window_id: &str,
    model_tag: &str,
    results: Vec<Result<Vec<Vec<f64>>>>,
) -> Result<SampleSet> {
    let samples: Result<Vec<Vec<Vec<f64>>>> = results.into_iter().collect();
    SampleSet::new(window_id, model_tag, samples?)
}

/// Draw `count` independent future trajectories by plain inverse-flow
/// sampling. Trajectory `i` uses RNG stream `i` of `seed`, so output is
/// identical whether trajectories run in parallel or serially.
pub fn sample_plain(
    model: &GruNfModel,
    window_id: &str,
    window: &[Vec<f64>],
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    check_window(model, window, horizon, count)?;
    let h0 = recurrent::encode_window(window, &model.gru, &GruState::zeros(model.dims.hidden))?;
    let results = parallel::map_indexed(count, |i| rollout_plain(model, &h0, horizon, seed, i));
    collect_samples(window_id, "plain", results)
}

/// Sequential reference implementation of [`sample_plain`].
pub fn sample_plain_serial(
    model: &GruNfModel,
    window_id: &str,
    window: &[Vec<f64>],
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    check_window(model, window, horizon, count)?;
    let h0 = recurrent::encode_window(window, &model.gru, &GruState::zeros(model.dims.hidden))?;
    let results =
        parallel::map_indexed_serial(count, |i| rollout_plain(model, &h0, horizon, seed, i));
    collect_samples(window_id, "plain", results)
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {} more)",
                self.pos, n
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serialize the model to its binary checkpoint representation.
pub fn checkpoint_bytes(model: &GruNfModel) -> Vec<u8> {
    let params = model.flatten_params();
    let mut buf = Vec::with_capacity(64 + 8 * params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut buf, CHECKPOINT_VERSION);
    push_u32(&mut buf, model.dims.input as u32);
    push_u32(&mut buf, model.dims.hidden as u32);
    push_u32(&mut buf, model.dims.flow_layers as u32);
    push_u32(&mut buf, model.dims.cond_hidden as u32);
    push_f64(&mut buf, model.dims.scale_cap);
    push_u32(&mut buf, model.meta.epochs);
    push_u64(&mut buf, model.meta.seed);
    push_f64(&mut buf, model.meta.final_nll);
    for v in params {
        push_f64(&mut buf, v);
    }
    buf
}

/// Parse a checkpoint produced by [`checkpoint_bytes`].
pub fn model_from_bytes(data: &[u8]) -> Result<GruNfModel> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {} (expected {})",
            version, CHECKPOINT_VERSION
        )));
    }
    let dims = ModelDims {
        input: r.u32()? as usize,
        hidden: r.u32()? as usize,
        flow_layers: r.u32()? as usize,
        cond_hidden: r.u32()? as usize,
        scale_cap: r.f64()?,
    };
    let meta = TrainMeta { epochs: r.u32()?, seed: r.u64()?, final_nll: r.f64()? };
    let mut model = GruNfModel::zeros(dims).map_err(|e| Error::Format(e.to_string()))?;
    model.meta = meta;
    let count = model.param_count();
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(r.f64()?);
    }
    if r.pos != data.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            data.len() - r.pos
        )));
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    model.set_params(&params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &GruNfModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GruNfModel> {
    let data = fs::read(path)?;
    model_from_bytes(&data)
}
