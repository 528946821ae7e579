//! GRU cell, window encoding, and the linear readout head.
//!
//! The update convention is fixed to `h' = (1-z)⊙h + z⊙ĥ` so hand-computed
//! expectations are unambiguous. The readout `ŷ = W_o·h + b_o` is the
//! deterministic point prediction used as the consistency anchor during
//! refined sampling; it is trained jointly through an auxiliary
//! mean-squared-error term.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::matrix::DenseMatrix;
use crate::numeric::tape::{sigmoid, NodeId, Tape};

/// Hidden state of one trajectory. Never shared across trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct GruState(pub Vec<f64>);

impl GruState {
    pub fn zeros(hidden: usize) -> Self {
        GruState(vec![0.0; hidden])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Gate weights, biases, and the readout head.
///
/// Immutable after training; any number of rollouts may read it concurrently.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_r: DenseMatrix,
    pub u_r: DenseMatrix,
    pub b_r: DenseMatrix,
    pub w_z: DenseMatrix,
    pub u_z: DenseMatrix,
    pub b_z: DenseMatrix,
    pub w_h: DenseMatrix,
    pub u_h: DenseMatrix,
    pub b_h: DenseMatrix,
    pub w_o: DenseMatrix,
    pub b_o: DenseMatrix,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_r: DenseMatrix::zeros(hidden, input),
            u_r: DenseMatrix::zeros(hidden, hidden),
            b_r: DenseMatrix::zeros(hidden, 1),
            w_z: DenseMatrix::zeros(hidden, input),
            u_z: DenseMatrix::zeros(hidden, hidden),
            b_z: DenseMatrix::zeros(hidden, 1),
            w_h: DenseMatrix::zeros(hidden, input),
            u_h: DenseMatrix::zeros(hidden, hidden),
            b_h: DenseMatrix::zeros(hidden, 1),
            w_o: DenseMatrix::zeros(input, hidden),
            b_o: DenseMatrix::zeros(input, 1),
        }
    }

    /// Uniform(-1/√H, 1/√H) initialization for every entry.
    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut fill = |rows: usize, cols: usize| {
            let values: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            DenseMatrix::new_unchecked(rows, cols, values)
        };
        GruParams {
            w_r: fill(hidden, input),
            u_r: fill(hidden, hidden),
            b_r: fill(hidden, 1),
            w_z: fill(hidden, input),
            u_z: fill(hidden, hidden),
            b_z: fill(hidden, 1),
            w_h: fill(hidden, input),
            u_h: fill(hidden, hidden),
            b_h: fill(hidden, 1),
            w_o: fill(input, hidden),
            b_o: fill(input, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.rows()
    }

    /// Parameter matrices in canonical order (shared by the trainer, the
    /// checkpoint format, and gradient checks).
    pub fn ordered(&self) -> [&DenseMatrix; 11] {
        [
            &self.w_r, &self.u_r, &self.b_r, &self.w_z, &self.u_z, &self.b_z, &self.w_h,
            &self.u_h, &self.b_h, &self.w_o, &self.b_o,
        ]
    }

    pub fn ordered_mut(&mut self) -> [&mut DenseMatrix; 11] {
        [
            &mut self.w_r, &mut self.u_r, &mut self.b_r, &mut self.w_z, &mut self.u_z,
            &mut self.b_z, &mut self.w_h, &mut self.u_h, &mut self.b_h, &mut self.w_o,
            &mut self.b_o,
        ]
    }

    fn check_dims(&self, y_len: usize, h_len: usize) -> Result<()> {
        if y_len != self.input_dim() || h_len != self.hidden_dim() {
            return Err(Error::shape(
                "gru_cell",
                format!(
                    "input {} / hidden {} against params d={} H={}",
                    y_len,
                    h_len,
                    self.input_dim(),
                    self.hidden_dim()
                ),
            ));
        }
        Ok(())
    }
}

/// One GRU update: `r = σ(W_r y + U_r h + b_r)`, `z = σ(W_z y + U_z h + b_z)`,
/// `ĥ = tanh(W_h y + U_h (r⊙h) + b_h)`, `h' = (1-z)⊙h + z⊙ĥ`.
pub fn gru_cell(y_prev: &[f64], h_prev: &GruState, p: &GruParams) -> Result<GruState> {
    p.check_dims(y_prev.len(), h_prev.dim())?;
    let h = h_prev.as_slice();
    let hidden = p.hidden_dim();

    let gate = |w: &DenseMatrix, u: &DenseMatrix, b: &DenseMatrix| -> Result<Vec<f64>> {
        let wy = w.matvec(y_prev)?;
        let uh = u.matvec(h)?;
        Ok((0..hidden).map(|i| wy[i] + uh[i] + b.as_slice()[i]).collect())
    };

    let r: Vec<f64> = gate(&p.w_r, &p.u_r, &p.b_r)?.iter().map(|&x| sigmoid(x)).collect();
    let z: Vec<f64> = gate(&p.w_z, &p.u_z, &p.b_z)?.iter().map(|&x| sigmoid(x)).collect();

    let rh: Vec<f64> = r.iter().zip(h).map(|(&ri, &hi)| ri * hi).collect();
    let wy = p.w_h.matvec(y_prev)?;
    let uh = p.u_h.matvec(&rh)?;
    let candidate: Vec<f64> = (0..hidden)
        .map(|i| (wy[i] + uh[i] + p.b_h.as_slice()[i]).tanh())
        .collect();

    let next: Vec<f64> = (0..hidden)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * candidate[i])
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("gru_cell produced a non-finite state"));
    }
    Ok(GruState(next))
}

/// Deterministic point prediction `ŷ = W_o h + b_o`.
pub fn readout(h: &GruState, p: &GruParams) -> Result<Vec<f64>> {
    let wh = p.w_o.matvec(h.as_slice())?;
    Ok(wh.iter().zip(p.b_o.as_slice()).map(|(&a, &b)| a + b).collect())
}

/// Fold `gru_cell` over the window frames in time order.
pub fn encode_window(window: &[Vec<f64>], p: &GruParams, h0: &GruState) -> Result<GruState> {
    if window.is_empty() {
        return Err(Error::contract("encode_window: empty window"));
    }
    let mut h = h0.clone();
    for frame in window {
        h = gru_cell(frame, &h, p)?;
    }
    Ok(h)
}

/// Tape-registered parameter handles, mirroring [`GruParams::ordered`].
#[derive(Clone, Copy, Debug)]
pub struct GruParamNodes {
    pub w_r: NodeId,
    pub u_r: NodeId,
    pub b_r: NodeId,
    pub w_z: NodeId,
    pub u_z: NodeId,
    pub b_z: NodeId,
    pub w_h: NodeId,
    pub u_h: NodeId,
    pub b_h: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
}

impl GruParamNodes {
    pub fn from_ids(ids: &[NodeId]) -> Self {
        GruParamNodes {
            w_r: ids[0],
            u_r: ids[1],
            b_r: ids[2],
            w_z: ids[3],
            u_z: ids[4],
            b_z: ids[5],
            w_h: ids[6],
            u_h: ids[7],
            b_h: ids[8],
            w_o: ids[9],
            b_o: ids[10],
        }
    }

    pub fn register(p: &GruParams, tape: &mut Tape) -> Self {
        let ids: Vec<NodeId> = p.ordered().iter().map(|m| tape.leaf((*m).clone())).collect();
        Self::from_ids(&ids)
    }
}

/// Taped GRU update over a batch: `y` is d×B, `h` is H×B.
pub fn gru_cell_taped(
    tape: &mut Tape,
    p: &GruParamNodes,
    y: NodeId,
    h: NodeId,
) -> Result<NodeId> {
    let pre_gate = |tape: &mut Tape, w: NodeId, u: NodeId, b: NodeId| -> Result<NodeId> {
        let wy = tape.matmul(w, y)?;
        let uh = tape.matmul(u, h)?;
        let s = tape.add(wy, uh)?;
        tape.add_broadcast_col(s, b)
    };
    let r_pre = pre_gate(tape, p.w_r, p.u_r, p.b_r)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = pre_gate(tape, p.w_z, p.u_z, p.b_z)?;
    let z = tape.sigmoid(z_pre);

    let rh = tape.mul_elem(r, h)?;
    let wy = tape.matmul(p.w_h, y)?;
    let urh = tape.matmul(p.u_h, rh)?;
    let cand_sum = tape.add(wy, urh)?;
    let cand_pre = tape.add_broadcast_col(cand_sum, p.b_h)?;
    let candidate = tape.tanh(cand_pre);

    let one_minus_z = tape.affine_scalar(z, -1.0, 1.0);
    let keep = tape.mul_elem(one_minus_z, h)?;
    let take = tape.mul_elem(z, candidate)?;
    tape.add(keep, take)
}

/// Taped readout over a batch.
pub fn readout_taped(tape: &mut Tape, p: &GruParamNodes, h: NodeId) -> Result<NodeId> {
    let wh = tape.matmul(p.w_o, h)?;
    tape.add_broadcast_col(wh, p.b_o)
}
