//! Refined sampling: Metropolis-Hastings steps interleaved between inverse
//! flow layers.
//!
//! A refined draw starts from the latent sample and walks the flow stack
//! from the latent side to the data side. After applying layer inverse `k`
//! of `n` (counting traversal steps), the state takes `m` MH steps under the
//! interpolated potential
//!
//! `u_λ(y) = (1-λ)·½‖y‖² + λ·‖ŷ - y‖₂`, with `λ = k/n`,
//!
//! so the prior term dominates on the latent side and the consistency term
//! — anchored at the GRU point prediction `ŷ`, computed once per timestep —
//! dominates on the data side. Proposals are isotropic Gaussians centred at
//! the current state, so the Hastings correction vanishes and acceptance is
//! `min(1, exp(u(y) - u(y')))`.
//!
//! With `m = 0` the refined sampler reduces bit-for-bit to plain sampling:
//! latent draws share the plain sampler's per-trajectory RNG streams, and MH
//! chains consume disjoint streams keyed by trajectory and step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self};
use crate::metrics::SampleSet;
use crate::model::GruNfModel;
use crate::parallel;
use crate::recurrent::{self, GruState};
use crate::rng::{stream_rng, MH_STREAM_BASE};

/// Where the consistency anchor `ŷ` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Linear readout of the hidden state (default).
    Readout,
    /// Flow inverse of the prior mean, `f⁻¹(0 | h)`.
    FlowAtPriorMean,
}

/// Form of the consistency energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetEnergyKind {
    /// Euclidean norm `‖ŷ - y‖₂` (default).
    L2,
    /// Squared form `‖ŷ - y‖₂²`, kept for ablation.
    L2Squared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// MH steps per layer; 0 degenerates to plain sampling.
    pub mh_steps: usize,
    /// Per-dimension Gaussian proposal scale.
    pub proposal_std: f64,
    pub seed: u64,
    pub anchor: AnchorMode,
    pub target_energy: TargetEnergyKind,
    /// Run the λ schedule in forward-layer-index order instead of traversal
    /// order.
    pub lambda_reversed: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mh_steps: 2,
            proposal_std: 0.05,
            seed: 0,
            anchor: AnchorMode::Readout,
            target_energy: TargetEnergyKind::L2,
            lambda_reversed: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proposal_std <= 0.0 {
            return Err(Error::Config("proposal_std must be positive".into()));
        }
        Ok(())
    }
}

/// Energy interpolation state for one traversal step.
#[derive(Clone, Debug)]
pub struct EnergyContext {
    /// Interpolation weight, exactly `layer_step / layer_count` by default.
    pub lambda: f64,
    /// The GRU point prediction `ŷ` for this timestep.
    pub anchor: Vec<f64>,
    /// Traversal position `k`, 1-based.
    pub layer_step: usize,
    pub layer_count: usize,
    pub target_kind: TargetEnergyKind,
}

impl EnergyContext {
    pub fn new(
        layer_step: usize,
        layer_count: usize,
        anchor: Vec<f64>,
        cfg: &SamplerConfig,
    ) -> Self {
        let k = if cfg.lambda_reversed {
            layer_count - layer_step + 1
        } else {
            layer_step
        };
        EnergyContext {
            lambda: k as f64 / layer_count as f64,
            anchor,
            layer_step,
            layer_count,
            target_kind: cfg.target_energy,
        }
    }
}

/// Standard-Gaussian prior energy `½‖y‖²`.
pub fn prior_energy(y: &[f64]) -> f64 {
    0.5 * y.iter().map(|v| v * v).sum::<f64>()
}

/// Consistency energy `‖ŷ - y‖₂` (unsquared).
pub fn target_energy(y: &[f64], anchor: &[f64]) -> Result<f64> {
    if y.len() != anchor.len() {
        return Err(Error::shape(
            "target_energy",
            format!("state dim {} vs anchor dim {}", y.len(), anchor.len()),
        ));
    }
    Ok(y.iter()
        .zip(anchor)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Interpolated potential `(1-λ)·prior + λ·target`.
pub fn potential(y: &[f64], ctx: &EnergyContext) -> Result<f64> {
    let target = match ctx.target_kind {
        TargetEnergyKind::L2 => target_energy(y, &ctx.anchor)?,
        TargetEnergyKind::L2Squared => {
            let t = target_energy(y, &ctx.anchor)?;
            t * t
        }
    };
    Ok((1.0 - ctx.lambda) * prior_energy(y) + ctx.lambda * target)
}

/// Metropolis acceptance probability for an energy increase `delta_u`.
pub fn accept_probability(delta_u: f64) -> f64 {
    (-delta_u).exp().min(1.0)
}

/// The accept/reject decision shared by every MH step: one uniform draw per
/// proposal regardless of outcome, so stream consumption is deterministic.
pub fn accept<R: Rng>(delta_u: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < accept_probability(delta_u)
}

/// One MH step: propose `y + ε` with `ε ~ N(0, proposal_std²·I)`, accept
/// with probability `min(1, exp(u(y) - u(y')))`.
pub fn mh_step<R: Rng>(
    y: &[f64],
    ctx: &EnergyContext,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let proposal: Vec<f64> = y
        .iter()
        .map(|&v| v + cfg.proposal_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let current_u = potential(y, ctx)?;
    let proposal_u = potential(&proposal, ctx)?;
    if accept(proposal_u - current_u, rng) {
        Ok((proposal, true))
    } else {
        Ok((y.to_vec(), false))
    }
}

/// Per-traversal-step chain statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerChainStats {
    /// Traversal position, 1-based.
    pub layer_step: usize,
    pub lambda: f64,
    pub proposals: usize,
    pub accepts: usize,
    pub energy_before: f64,
    pub energy_after: f64,
}

/// Diagnostics for one refined draw.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub layers: Vec<LayerChainStats>,
}

/// The anchor `ŷ` for the current timestep, per the configured mode.
pub fn anchor_point(model: &GruNfModel, h: &GruState, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    match cfg.anchor {
        AnchorMode::Readout => recurrent::readout(h, &model.gru),
        AnchorMode::FlowAtPriorMean => {
            flow::inverse(&vec![0.0; model.dims.input], h, &model.flow)
        }
    }
}

/// Refine one latent draw into a data-space sample: alternate layer
/// inverses (latent side first) with `m` MH steps at `λ = k/n`.
pub fn refine_sample(
    z: &[f64],
    h: &GruState,
    model: &GruNfModel,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, ChainDiagnostics)> {
    cfg.validate()?;
    let n = model.flow.n_layers();
    let anchor = anchor_point(model, h, cfg)?;
    let mut y = z.to_vec();
    let mut layers = Vec::with_capacity(n);
    for k in 1..=n {
        let layer = &model.flow.layers[n - k];
        y = flow::layer_inverse(&y, h, layer)?;
        let ctx = EnergyContext::new(k, n, anchor.clone(), cfg);
        let energy_before = potential(&y, &ctx)?;
        let mut accepts = 0;
        for _ in 0..cfg.mh_steps {
            let (next, accepted) = mh_step(&y, &ctx, cfg, rng)?;
            y = next;
            if accepted {
                accepts += 1;
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("refine_sample: non-finite chain state"));
            }
        }
        let energy_after = potential(&y, &ctx)?;
        layers.push(LayerChainStats {
            layer_step: k,
            lambda: ctx.lambda,
            proposals: cfg.mh_steps,
            accepts,
            energy_before,
            energy_after,
        });
    }
    Ok((y, ChainDiagnostics { layers }))
}

/// Aggregated chain statistics for a whole sampling run; one JSON line per
/// traversal step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer_step: usize,
    pub lambda: f64,
    pub proposals: usize,
    pub accepts: usize,
    pub acceptance_rate: f64,
    pub mean_energy_before: f64,
    pub mean_energy_after: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub per_layer: Vec<LayerAggregate>,
}

impl SamplerDiagnostics {
    fn from_chains(chains: &[ChainDiagnostics], n_layers: usize) -> Self {
        let mut per_layer = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let mut proposals = 0;
            let mut accepts = 0;
            let mut before = 0.0;
            let mut after = 0.0;
            let mut count = 0usize;
            let mut lambda = 0.0;
            for chain in chains {
                let s = &chain.layers[k];
                proposals += s.proposals;
                accepts += s.accepts;
                before += s.energy_before;
                after += s.energy_after;
                lambda = s.lambda;
                count += 1;
            }
            per_layer.push(LayerAggregate {
                layer_step: k + 1,
                lambda,
                proposals,
                accepts,
                acceptance_rate: if proposals > 0 {
                    accepts as f64 / proposals as f64
                } else {
                    0.0
                },
                mean_energy_before: before / count.max(1) as f64,
                mean_energy_after: after / count.max(1) as f64,
            });
        }
        SamplerDiagnostics { per_layer }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for layer in &self.per_layer {
            out.push_str(&serde_json::to_string(layer).expect("diagnostics serialize"));
            out.push('\n');
        }
        out
    }

    fn warn_on_extremes(&self) {
        for layer in &self.per_layer {
            if layer.proposals > 0
                && (layer.acceptance_rate < 0.05 || layer.acceptance_rate > 0.95)
            {
                log::warn!(
                    "MH acceptance rate {:.3} at traversal step {} (lambda {:.3}); \
                     consider retuning proposal_std",
                    layer.acceptance_rate,
                    layer.layer_step,
                    layer.lambda
                );
            }
        }
    }
}

fn rollout_refined(
    model: &GruNfModel,
    h0: &GruState,
    horizon: usize,
    cfg: &SamplerConfig,
    traj: usize,
) -> Result<(Vec<Vec<f64>>, Vec<ChainDiagnostics>)> {
    let mut z_rng = stream_rng(cfg.seed, traj as u64);
    let mut h = h0.clone();
    let mut frames = Vec::with_capacity(horizon);
    let mut chains = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let z: Vec<f64> = (0..model.dims.input)
            .map(|_| z_rng.sample(StandardNormal))
            .collect();
        let mut mh_rng = stream_rng(
            cfg.seed,
            MH_STREAM_BASE | (traj as u64 * horizon as u64 + t as u64),
        );
        let (y, diag) = refine_sample(&z, &h, model, cfg, &mut mh_rng)?;
        h = recurrent::gru_cell(&y, &h, &model.gru)?;
        frames.push(y);
        chains.push(diag);
    }
    Ok((frames, chains))
}

fn run_refined(
    model: &GruNfModel,
    window_id: &str,
    window: &[Vec<f64>],
    horizon: usize,
    count: usize,
    cfg: &SamplerConfig,
    serial: bool,
) -> Result<(SampleSet, SamplerDiagnostics)> {
    cfg.validate()?;
    if window.is_empty() {
        return Err(Error::contract("sample_refined: empty conditioning window"));
    }
    if horizon == 0 || count == 0 {
        return Err(Error::contract("sample_refined: horizon and count must be positive"));
    }
    if window.iter().any(|f| f.len() != model.dims.input) {
        return Err(Error::shape(
            "sample_refined",
            format!("window frame dim {} vs model dim {}", window[0].len(), model.dims.input),
        ));
    }
    let h0 = recurrent::encode_window(window, &model.gru, &GruState::zeros(model.dims.hidden))?;
    let job = |i: usize| rollout_refined(model, &h0, horizon, cfg, i);
    let results = if serial {
        parallel::map_indexed_serial(count, job)
    } else {
        parallel::map_indexed(count, job)
    };
    let mut samples = Vec::with_capacity(count);
    let mut chains = Vec::new();
    for r in results {
        let (frames, diags) = r?;
        samples.push(frames);
        chains.extend(diags);
    }
    let set = SampleSet::new(window_id, "refined", samples)?;
    let diagnostics = SamplerDiagnostics::from_chains(&chains, model.flow.n_layers());
    diagnostics.warn_on_extremes();
    Ok((set, diagnostics))
}

/// Refined counterpart of plain sampling: the same rollout loop, with every
/// per-step draw passed through `refine_sample`; the refined frame feeds the
/// GRU for the next step.
pub fn sample_refined(
    model: &GruNfModel,
    window_id: &str,
    window: &[Vec<f64>],
    horizon: usize,
    count: usize,
    cfg: &SamplerConfig,
) -> Result<(SampleSet, SamplerDiagnostics)> {
    run_refined(model, window_id, window, horizon, count, cfg, false)
}

/// Sequential reference implementation of [`sample_refined`].
pub fn sample_refined_serial(
    model: &GruNfModel,
    window_id: &str,
    window: &[Vec<f64>],
    horizon: usize,
    count: usize,
    cfg: &SamplerConfig,
) -> Result<(SampleSet, SamplerDiagnostics)> {
    run_refined(model, window_id, window, horizon, count, cfg, true)
}
