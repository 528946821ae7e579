//! Conditional normalizing flow: data space ↔ latent space.
//!
//! The flow is a stack of affine coupling layers conditioned on the GRU
//! hidden state. Each layer passes a masked subset of coordinates through
//! unchanged and transforms the rest as `x' = x⊙exp(s) + t`, where `s` and
//! `t` come from one-hidden-layer conditioners fed the passthrough
//! coordinates concatenated with the hidden state. The log-determinant of a
//! layer is exactly `Σ s`, the inverse is `(x' - t)⊙exp(-s)`, and masks
//! alternate between consecutive layers (even-indexed coordinates pass
//! through in the first layer).
//!
//! Scale outputs are bounded by `scale_cap · tanh(raw)`, and conditioner
//! output layers start at zero so a fresh stack is the identity map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::matrix::DenseMatrix;
use crate::numeric::tape::{NodeId, Tape};
use crate::recurrent::GruState;

pub const LN_2PI: f64 = 1.8378770664093453;

/// One-hidden-layer perceptron with tanh nonlinearity.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

impl Mlp {
    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            w1: DenseMatrix::zeros(hidden, input),
            b1: DenseMatrix::zeros(hidden, 1),
            w2: DenseMatrix::zeros(output, hidden),
            b2: DenseMatrix::zeros(output, 1),
        }
    }

    /// Random first layer, zero output layer: the net starts as the zero map.
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w1: Vec<f64> = (0..hidden * input).map(|_| rng.gen_range(-bound..bound)).collect();
        let b1: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-bound..bound)).collect();
        Mlp {
            w1: DenseMatrix::new_unchecked(hidden, input, w1),
            b1: DenseMatrix::new_unchecked(hidden, 1, b1),
            w2: DenseMatrix::zeros(output, hidden),
            b2: DenseMatrix::zeros(output, 1),
        }
    }

    fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        let pre = self.w1.matvec(input)?;
        let hidden: Vec<f64> = pre
            .iter()
            .zip(self.b1.as_slice())
            .map(|(&a, &b)| (a + b).tanh())
            .collect();
        let out = self.w2.matvec(&hidden)?;
        Ok(out.iter().zip(self.b2.as_slice()).map(|(&a, &b)| a + b).collect())
    }

    pub fn ordered(&self) -> [&DenseMatrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn ordered_mut(&mut self) -> [&mut DenseMatrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// One coupling layer: passthrough index set, transform index set, and the
/// two conditioners. Bijective for any finite conditioner output because the
/// scale is bounded.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    pub pass_idx: Vec<usize>,
    pub trans_idx: Vec<usize>,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
    pub scale_cap: f64,
}

impl CouplingLayer {
    /// Conditioner outputs `(s, t)` for the given passthrough coordinates and
    /// hidden state. `s` is already capped.
    fn conditioner(&self, x_pass: &[f64], h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut input = Vec::with_capacity(x_pass.len() + h.len());
        input.extend_from_slice(x_pass);
        input.extend_from_slice(h);
        let raw_s = self.scale_net.eval(&input)?;
        let t = self.shift_net.eval(&input)?;
        let s: Vec<f64> = raw_s.iter().map(|&v| self.scale_cap * v.tanh()).collect();
        if s.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("coupling conditioner produced non-finite s/t"));
        }
        Ok((s, t))
    }

    fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pass: Vec<f64> = self.pass_idx.iter().map(|&i| x[i]).collect();
        let trans: Vec<f64> = self.trans_idx.iter().map(|&i| x[i]).collect();
        (pass, trans)
    }

    fn assemble(&self, pass: &[f64], trans: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; pass.len() + trans.len()];
        for (v, &i) in pass.iter().zip(&self.pass_idx) {
            out[i] = *v;
        }
        for (v, &i) in trans.iter().zip(&self.trans_idx) {
            out[i] = *v;
        }
        out
    }
}

/// Forward pass of one layer (data → latent direction): transformed
/// coordinates become `x⊙exp(s) + t`; returns the layer's log-det `Σ s`.
pub fn layer_forward(x: &[f64], h: &GruState, layer: &CouplingLayer) -> Result<(Vec<f64>, f64)> {
    let (pass, trans) = layer.split(x);
    let (s, t) = layer.conditioner(&pass, h.as_slice())?;
    let transformed: Vec<f64> = trans
        .iter()
        .zip(s.iter().zip(&t))
        .map(|(&xi, (&si, &ti))| xi * si.exp() + ti)
        .collect();
    let logdet: f64 = s.iter().sum();
    Ok((layer.assemble(&pass, &transformed), logdet))
}

/// Inverse of one layer (latent → data direction): `(x' - t)⊙exp(-s)`.
pub fn layer_inverse(x: &[f64], h: &GruState, layer: &CouplingLayer) -> Result<Vec<f64>> {
    let (pass, trans) = layer.split(x);
    let (s, t) = layer.conditioner(&pass, h.as_slice())?;
    let restored: Vec<f64> = trans
        .iter()
        .zip(s.iter().zip(&t))
        .map(|(&xi, (&si, &ti))| (xi - ti) * (-si).exp())
        .collect();
    if restored.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("layer_inverse produced non-finite output"));
    }
    Ok(layer.assemble(&pass, &restored))
}

/// Ordered stack of coupling layers.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    pub layers: Vec<CouplingLayer>,
    dim: usize,
}

impl FlowStack {
    /// Identity-initialized stack: random conditioner hidden layers, zero
    /// output layers.
    pub fn init(
        dim: usize,
        n_layers: usize,
        cond_hidden: usize,
        hidden_state_dim: usize,
        scale_cap: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::contract("flow requires dim >= 2 for a two-sided mask"));
        }
        if n_layers < 2 {
            return Err(Error::contract("flow requires at least 2 layers"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (pass_idx, trans_idx) = mask_indices(dim, k);
            let cond_in = pass_idx.len() + hidden_state_dim;
            let out = trans_idx.len();
            layers.push(CouplingLayer {
                pass_idx,
                trans_idx,
                scale_net: Mlp::init(cond_in, cond_hidden, out, rng),
                shift_net: Mlp::init(cond_in, cond_hidden, out, rng),
                scale_cap,
            });
        }
        Ok(FlowStack { layers, dim })
    }

    /// All-zero conditioners: the stack is exactly the identity map.
    pub fn zeros(
        dim: usize,
        n_layers: usize,
        cond_hidden: usize,
        hidden_state_dim: usize,
        scale_cap: f64,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::contract("flow requires dim >= 2 for a two-sided mask"));
        }
        if n_layers < 2 {
            return Err(Error::contract("flow requires at least 2 layers"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (pass_idx, trans_idx) = mask_indices(dim, k);
            let cond_in = pass_idx.len() + hidden_state_dim;
            let out = trans_idx.len();
            layers.push(CouplingLayer {
                pass_idx,
                trans_idx,
                scale_net: Mlp::zeros(cond_in, cond_hidden, out),
                shift_net: Mlp::zeros(cond_in, cond_hidden, out),
                scale_cap,
            });
        }
        Ok(FlowStack { layers, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Even-indexed coordinates pass through in layer 0; masks alternate.
pub fn mask_indices(dim: usize, layer: usize) -> (Vec<usize>, Vec<usize>) {
    let evens: Vec<usize> = (0..dim).step_by(2).collect();
    let odds: Vec<usize> = (1..dim).step_by(2).collect();
    if layer.is_multiple_of(2) {
        (evens, odds)
    } else {
        (odds, evens)
    }
}

/// Full forward map (data → latent) with total log-det.
pub fn forward(x: &[f64], h: &GruState, stack: &FlowStack) -> Result<(Vec<f64>, f64)> {
    if x.len() != stack.dim {
        return Err(Error::shape(
            "flow_forward",
            format!("input length {} vs flow dim {}", x.len(), stack.dim),
        ));
    }
    let mut cur = x.to_vec();
    let mut logdet = 0.0;
    for layer in &stack.layers {
        let (next, ld) = layer_forward(&cur, h, layer)?;
        cur = next;
        logdet += ld;
    }
    Ok((cur, logdet))
}

/// Full inverse map (latent → data), applying layer inverses in reverse order.
pub fn inverse(z: &[f64], h: &GruState, stack: &FlowStack) -> Result<Vec<f64>> {
    if z.len() != stack.dim {
        return Err(Error::shape(
            "flow_inverse",
            format!("input length {} vs flow dim {}", z.len(), stack.dim),
        ));
    }
    let mut cur = z.to_vec();
    for layer in stack.layers.iter().rev() {
        cur = layer_inverse(&cur, h, layer)?;
    }
    Ok(cur)
}

/// Exact log-density: `log N(f(x); 0, I) + logdet`.
pub fn log_prob(x: &[f64], h: &GruState, stack: &FlowStack) -> Result<f64> {
    let (z, logdet) = forward(x, h, stack)?;
    let sq: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * (stack.dim as f64) * LN_2PI - 0.5 * sq + logdet)
}

/// Tape handles for one conditioner.
#[derive(Clone, Copy, Debug)]
pub struct MlpNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl MlpNodes {
    pub fn from_ids(ids: &[NodeId]) -> Self {
        MlpNodes { w1: ids[0], b1: ids[1], w2: ids[2], b2: ids[3] }
    }

    fn eval_taped(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let pre = tape.matmul(self.w1, input)?;
        let pre_b = tape.add_broadcast_col(pre, self.b1)?;
        let hidden = tape.tanh(pre_b);
        let out = tape.matmul(self.w2, hidden)?;
        tape.add_broadcast_col(out, self.b2)
    }
}

/// Tape handles for one coupling layer.
#[derive(Clone, Debug)]
pub struct LayerNodes {
    pub scale: MlpNodes,
    pub shift: MlpNodes,
}

/// Tape handles for the whole stack, in canonical parameter order
/// (per layer: scale w1 b1 w2 b2, then shift w1 b1 w2 b2).
#[derive(Clone, Debug)]
pub struct FlowParamNodes {
    pub layers: Vec<LayerNodes>,
}

impl FlowParamNodes {
    pub fn from_ids(n_layers: usize, ids: &[NodeId]) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let base = k * 8;
            layers.push(LayerNodes {
                scale: MlpNodes::from_ids(&ids[base..base + 4]),
                shift: MlpNodes::from_ids(&ids[base + 4..base + 8]),
            });
        }
        FlowParamNodes { layers }
    }

    pub fn register(stack: &FlowStack, tape: &mut Tape) -> Self {
        let mut ids = Vec::new();
        for layer in &stack.layers {
            for m in layer.scale_net.ordered().iter().chain(layer.shift_net.ordered().iter()) {
                ids.push(tape.leaf((*m).clone()));
            }
        }
        Self::from_ids(stack.n_layers(), &ids)
    }
}

/// Taped forward pass over a batch (`x` and `h` are d×B and H×B).
/// Returns the latent node and the scalar total log-det summed over the batch.
pub fn forward_taped(
    tape: &mut Tape,
    stack: &FlowStack,
    nodes: &FlowParamNodes,
    x: NodeId,
    h: NodeId,
) -> Result<(NodeId, NodeId)> {
    let dim = stack.dim;
    let mut cur = x;
    let mut logdet: Option<NodeId> = None;
    for (layer, ln) in stack.layers.iter().zip(&nodes.layers) {
        let pass = tape.gather_rows(cur, &layer.pass_idx)?;
        let trans = tape.gather_rows(cur, &layer.trans_idx)?;
        let cond_in = tape.concat_rows(pass, h)?;
        let raw_s = ln.scale.eval_taped(tape, cond_in)?;
        let bounded = tape.tanh(raw_s);
        let s = tape.affine_scalar(bounded, layer.scale_cap, 0.0);
        let t = ln.shift.eval_taped(tape, cond_in)?;
        let exp_s = tape.exp(s);
        let scaled = tape.mul_elem(trans, exp_s)?;
        let transformed = tape.add(scaled, t)?;
        let from_pass = tape.scatter_rows(pass, &layer.pass_idx, dim)?;
        let from_trans = tape.scatter_rows(transformed, &layer.trans_idx, dim)?;
        cur = tape.add(from_pass, from_trans)?;
        let ld = tape.sum(s);
        logdet = Some(match logdet {
            None => ld,
            Some(acc) => tape.add(acc, ld)?,
        });
    }
    Ok((cur, logdet.expect("flow has at least two layers")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn random_stack(dim: usize, n_layers: usize, h_dim: usize, seed: u64, amp: f64) -> FlowStack {
        // Identity init plus small random output layers so the flow is
        // non-trivial but well-conditioned.
        let mut rng = stream_rng(seed, 0);
        let mut stack = FlowStack::init(dim, n_layers, 16, h_dim, 2.0, &mut rng).unwrap();
        for layer in &mut stack.layers {
            for net in [&mut layer.scale_net, &mut layer.shift_net] {
                for m in [&mut net.w2, &mut net.b2] {
                    let (r, c) = m.shape();
                    let vals: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-amp..amp)).collect();
                    *m = DenseMatrix::new_unchecked(r, c, vals);
                }
            }
        }
        stack
    }

    fn random_state(dim: usize, seed: u64) -> GruState {
        let mut rng = stream_rng(seed, 1);
        GruState((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn identity_initialized_layer_is_identity() {
        let stack = FlowStack::zeros(4, 2, 8, 3, 2.0).unwrap();
        let h = GruState(vec![0.5, -0.5, 1.0]);
        let x = [0.3, -1.2, 0.8, 2.5];
        let (y, logdet) = layer_forward(&x, &h, &stack.layers[0]).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(logdet, 0.0);
    }

    #[test]
    fn crafted_layer_doubles_one_coordinate() {
        // Force s = ln 2 on the transformed coordinate (d = 2, coordinate 1)
        // via the capped-tanh output path, with zero shift.
        let mut stack = FlowStack::zeros(2, 2, 4, 1, 1.0).unwrap();
        let ln2 = std::f64::consts::LN_2;
        stack.layers[0].scale_net.b2 = DenseMatrix::from_column(&[ln2.atanh()]);
        let h = GruState(vec![0.0]);
        let x = [1.5, 3.0];
        let (y, logdet) = layer_forward(&x, &h, &stack.layers[0]).unwrap();
        assert_eq!(y[0], 1.5);
        assert!((y[1] - 6.0).abs() < 1e-12, "got {}", y[1]);
        assert!((logdet - ln2).abs() < 1e-12);

        // And the inverse halves it back.
        let back = layer_inverse(&y, &h, &stack.layers[0]).unwrap();
        assert!((back[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stack_identity_and_roundtrip() {
        let stack = FlowStack::zeros(6, 4, 8, 4, 2.0).unwrap();
        let h = random_state(4, 2);
        let x = [0.1, -0.2, 0.3, -0.4, 0.5, -0.6];
        let (z, logdet) = forward(&x, &h, &stack).unwrap();
        assert_eq!(z, x.to_vec());
        assert_eq!(logdet, 0.0);
        assert_eq!(inverse(&z, &h, &stack).unwrap(), x.to_vec());
    }

    #[test]
    fn roundtrip_on_seeded_corpus() {
        let stack = random_stack(10, 4, 6, 42, 0.4);
        let h = random_state(6, 3);
        let mut rng = stream_rng(7, 2);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (z, _) = forward(&x, &h, &stack).unwrap();
            let back = inverse(&z, &h, &stack).unwrap();
            let err = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-9, "roundtrip error {}", err);
        }
    }

    #[test]
    fn latent_roundtrip_is_measure_coherent() {
        // z → inverse → forward recovers z.
        let stack = random_stack(8, 4, 5, 11, 0.5);
        let h = random_state(5, 4);
        let mut rng = stream_rng(19, 3);
        for _ in 0..200 {
            let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x = inverse(&z, &h, &stack).unwrap();
            let (z2, _) = forward(&x, &h, &stack).unwrap();
            let err = z
                .iter()
                .zip(&z2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-9, "latent roundtrip error {}", err);
        }
    }

    #[test]
    fn total_logdet_is_sum_of_layer_logdets() {
        let stack = random_stack(10, 4, 6, 13, 0.6);
        let h = random_state(6, 5);
        let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.5).collect();
        let (_, total) = forward(&x, &h, &stack).unwrap();
        let mut cur = x;
        let mut sum = 0.0;
        for layer in &stack.layers {
            let (next, ld) = layer_forward(&cur, &h, layer).unwrap();
            cur = next;
            sum += ld;
        }
        assert_eq!(total, sum);
    }

    /// log|det| of a square matrix by partial-pivot Gaussian elimination.
    /// Test-local oracle, independent of the flow implementation.
    #[allow(clippy::needless_range_loop)] // two rows of m are live at once
    fn log_abs_det(mut m: Vec<Vec<f64>>) -> f64 {
        let n = m.len();
        let mut acc = 0.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
                .unwrap();
            m.swap(col, pivot);
            let p = m[col][col];
            assert!(p != 0.0, "singular Jacobian in oracle");
            acc += p.abs().ln();
            for row in col + 1..n {
                let factor = m[row][col] / p;
                for k in col..n {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
        acc
    }

    #[test]
    fn analytic_logdet_matches_finite_difference_jacobian() {
        let step = 1e-5;
        for (dim, seed) in [(2usize, 1u64), (4, 2), (6, 3), (8, 4)] {
            let stack = random_stack(dim, 4, 4, seed, 0.7);
            let h = random_state(4, seed + 10);
            let mut rng = stream_rng(seed + 20, 0);
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, analytic) = forward(&x, &h, &stack).unwrap();

            let mut jac = vec![vec![0.0; dim]; dim];
            for j in 0..dim {
                let mut xp = x.clone();
                xp[j] += step;
                let (fp, _) = forward(&xp, &h, &stack).unwrap();
                let mut xm = x.clone();
                xm[j] -= step;
                let (fm, _) = forward(&xm, &h, &stack).unwrap();
                for i in 0..dim {
                    jac[i][j] = (fp[i] - fm[i]) / (2.0 * step);
                }
            }
            let numeric = log_abs_det(jac);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-5, "d={} rel error {}", dim, rel);
        }
    }

    #[test]
    fn log_prob_of_zero_under_identity_stack() {
        let stack = FlowStack::zeros(2, 2, 8, 3, 2.0).unwrap();
        let h = GruState::zeros(3);
        let lp = log_prob(&[0.0, 0.0], &h, &stack).unwrap();
        assert!((lp + LN_2PI).abs() < 1e-12, "log prob {}", lp);
    }

    #[test]
    fn log_prob_decreases_with_norm_under_identity_stack() {
        let stack = FlowStack::zeros(4, 2, 8, 2, 2.0).unwrap();
        let h = GruState::zeros(2);
        let mut prev = f64::INFINITY;
        for r in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let x = [r, 0.0, -r, r];
            let lp = log_prob(&x, &h, &stack).unwrap();
            assert!(lp < prev || r == 0.0);
            prev = lp;
        }
    }

    #[test]
    fn density_integrates_to_one_on_a_grid() {
        // Trapezoid quadrature of exp(log_prob) over a d=2 grid. The grid
        // extent is taken from the inverse image of the 6.5-sigma latent
        // ball, which bounds where the mass can live.
        let stack = random_stack(2, 2, 3, 77, 0.3);
        let h = random_state(3, 78);
        let mut extent = 0.0f64;
        for k in 0..64 {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
            let z = [6.5 * angle.cos(), 6.5 * angle.sin()];
            let x = inverse(&z, &h, &stack).unwrap();
            extent = extent.max(x[0].abs()).max(x[1].abs());
        }
        let (lo, hi, n) = (-(extent + 3.0), extent + 3.0, 501);
        let step = (hi - lo) / (n - 1) as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let x0 = lo + i as f64 * step;
            let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            for j in 0..n {
                let x1 = lo + j as f64 * step;
                let wy = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                let lp = log_prob(&[x0, x1], &h, &stack).unwrap();
                integral += wx * wy * lp.exp();
            }
        }
        integral *= step * step;
        assert!((integral - 1.0).abs() < 0.02, "integral {}", integral);
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let stack = random_stack(6, 4, 4, 5, 0.5);
        let h = random_state(4, 6);
        let x: Vec<f64> = vec![0.2, -0.4, 0.6, -0.8, 1.0, -1.2];
        let (z_plain, ld_plain) = forward(&x, &h, &stack).unwrap();

        let mut tape = Tape::new();
        let nodes = FlowParamNodes::register(&stack, &mut tape);
        let x_node = tape.leaf(DenseMatrix::from_column(&x));
        let h_node = tape.leaf(DenseMatrix::from_column(h.as_slice()));
        let (z_node, ld_node) = forward_taped(&mut tape, &stack, &nodes, x_node, h_node).unwrap();
        let z_taped = tape.value(z_node).as_slice().to_vec();
        let ld_taped = tape.value(ld_node).as_slice()[0];
        for (a, b) in z_plain.iter().zip(&z_taped) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((ld_plain - ld_taped).abs() < 1e-14);
    }

    #[test]
    fn log_prob_gradients_pass_grad_check() {
        use crate::numeric::gradcheck::grad_check;

        let stack = random_stack(4, 2, 3, 21, 0.5);
        let h = random_state(3, 22);
        let x = vec![0.4, -0.7, 0.2, 0.9];

        let shapes: Vec<(usize, usize)> = stack
            .layers
            .iter()
            .flat_map(|l| {
                l.scale_net
                    .ordered()
                    .iter()
                    .chain(l.shift_net.ordered().iter())
                    .map(|m| m.shape())
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut theta = Vec::new();
        for l in &stack.layers {
            for m in l.scale_net.ordered().iter().chain(l.shift_net.ordered().iter()) {
                theta.extend_from_slice(m.as_slice());
            }
        }

        let stack_for_build = stack.clone();
        let report = grad_check(
            move |tape, ids| {
                let nodes = FlowParamNodes::from_ids(stack_for_build.n_layers(), ids);
                let x_node = tape.leaf(DenseMatrix::from_column(&x));
                let h_node = tape.leaf(DenseMatrix::from_column(h.as_slice()));
                let (z, ld) = forward_taped(tape, &stack_for_build, &nodes, x_node, h_node)?;
                // -log N(z;0,I) - logdet up to the additive constant.
                let sq = tape.dot(z, z)?;
                let half_sq = tape.affine_scalar(sq, 0.5, 0.0);
                let neg_ld = tape.affine_scalar(ld, -1.0, 0.0);
                tape.add(half_sq, neg_ld)
            },
            &shapes,
            &theta,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }
}
