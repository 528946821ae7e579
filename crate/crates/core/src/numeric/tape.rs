//! Reverse-mode gradient tape over matrix-valued nodes.
//!
//! The tape records primitive operations during a forward pass and replays
//! them backward to accumulate gradients. Nodes are whole matrices rather
//! than scalars so the inner loops stay dense; a training step for a batch
//! of sequences is a few thousand nodes.
//!
//! The tape is single-writer: one forward/backward pass owns it exclusively.
//! Node values are immutable once created.

use crate::error::{Error, Result};
use crate::numeric::matrix::{matmul_grad_a, matmul_grad_b, matmul_into, DenseMatrix};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub(crate) fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    /// out = a * b
    Matmul { a: NodeId, b: NodeId, out: NodeId },
    /// out = a + b (same shape)
    Add { a: NodeId, b: NodeId, out: NodeId },
    /// out = a - b (same shape)
    Sub { a: NodeId, b: NodeId, out: NodeId },
    /// out = a ⊙ b (same shape)
    MulElem { a: NodeId, b: NodeId, out: NodeId },
    /// out = mul·a + add entrywise; only `mul` matters for the backward pass
    AffineScalar { a: NodeId, mul: f64, out: NodeId },
    /// out[i, j] = a[i, j] + bias[i, 0]
    AddBroadcastCol { a: NodeId, bias: NodeId, out: NodeId },
    Tanh { a: NodeId, out: NodeId },
    Sigmoid { a: NodeId, out: NodeId },
    Exp { a: NodeId, out: NodeId },
    Abs { a: NodeId, out: NodeId },
    /// out = Σ entries of a (1×1)
    Sum { a: NodeId, out: NodeId },
    /// out = Σ a ⊙ b (1×1, same shape)
    Dot { a: NodeId, b: NodeId, out: NodeId },
    /// out = rows of a selected by `rows`
    GatherRows { a: NodeId, rows: Vec<usize>, out: NodeId },
    /// out[rows[i], :] = a[i, :], other rows zero
    ScatterRows { a: NodeId, rows: Vec<usize>, out: NodeId },
    /// out = a stacked over b (rows of a first)
    ConcatRows { a: NodeId, b: NodeId, out: NodeId },
}

#[derive(Default)]
pub struct Tape {
    values: Vec<DenseMatrix>,
    ops: Vec<Op>,
}

/// Per-node gradients produced by `Tape::backward`.
pub struct Gradients {
    grads: Vec<DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &DenseMatrix {
        &self.grads[id.index()]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Register a leaf node (parameter or constant). Gradients of leaves not
    /// reached by the output are zero.
    pub fn leaf(&mut self, value: DenseMatrix) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        id
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.values[id.index()]
    }

    fn push(&mut self, value: DenseMatrix) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        id
    }

    fn shape_of(&self, id: NodeId) -> (usize, usize) {
        self.values[id.index()].shape()
    }

    fn require_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (ar, ac) = self.shape_of(a);
        let (br, bc) = self.shape_of(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::shape(op, format!("{}x{} vs {}x{}", ar, ac, br, bc)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = &self.values[a.index()];
        let vb = &self.values[b.index()];
        if va.cols() != vb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} times {}x{}", va.rows(), va.cols(), vb.rows(), vb.cols()),
            ));
        }
        let mut out = DenseMatrix::zeros(va.rows(), vb.cols());
        matmul_into(va, vb, &mut out);
        let out = self.push(out);
        self.ops.push(Op::Matmul { a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("mul_elem", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        self.ops.push(Op::MulElem { a, b, out });
        Ok(out)
    }

    /// Entrywise `mul·a + add` with scalar constants; constants get no gradient.
    pub fn affine_scalar(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let out = self.map(a, |x| mul * x + add);
        self.ops.push(Op::AffineScalar { a, mul, out });
        out
    }

    pub fn add_broadcast_col(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape_of(a);
        let (br, bc) = self.shape_of(bias);
        if br != ar || bc != 1 {
            return Err(Error::shape(
                "add_broadcast_col",
                format!("{}x{} with bias {}x{}", ar, ac, br, bc),
            ));
        }
        let va = &self.values[a.index()];
        let vb = &self.values[bias.index()];
        let mut out = vec![0.0; ar * ac];
        for i in 0..ar {
            let b_i = vb.as_slice()[i];
            let row = va.row(i);
            for j in 0..ac {
                out[i * ac + j] = row[j] + b_i;
            }
        }
        let out = self.push(DenseMatrix::new_unchecked(ar, ac, out));
        self.ops.push(Op::AddBroadcastCol { a, bias, out });
        Ok(out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, f64::tanh);
        self.ops.push(Op::Tanh { a, out });
        out
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, sigmoid);
        self.ops.push(Op::Sigmoid { a, out });
        out
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, f64::exp);
        self.ops.push(Op::Exp { a, out });
        out
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, f64::abs);
        self.ops.push(Op::Abs { a, out });
        out
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.values[a.index()].as_slice().iter().sum();
        let out = self.push(DenseMatrix::new_unchecked(1, 1, vec![total]));
        self.ops.push(Op::Sum { a, out });
        out
    }

    /// Σ aᵢⱼ·bᵢⱼ as a 1×1 node. `dot(x, x)` is the squared Frobenius norm.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("dot", a, b)?;
        let va = self.values[a.index()].as_slice();
        let vb = self.values[b.index()].as_slice();
        let total: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let out = self.push(DenseMatrix::new_unchecked(1, 1, vec![total]));
        self.ops.push(Op::Dot { a, b, out });
        Ok(out)
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (ar, ac) = self.shape_of(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= ar) {
            return Err(Error::shape(
                "gather_rows",
                format!("row index {} out of range for {} rows", bad, ar),
            ));
        }
        let va = &self.values[a.index()];
        let mut out = Vec::with_capacity(rows.len() * ac);
        for &r in rows {
            out.extend_from_slice(va.row(r));
        }
        let out = self.push(DenseMatrix::new_unchecked(rows.len(), ac, out));
        self.ops.push(Op::GatherRows { a, rows: rows.to_vec(), out });
        Ok(out)
    }

    /// Place row `i` of `a` at row `rows[i]` of an otherwise-zero matrix with
    /// `out_rows` rows.
    pub fn scatter_rows(&mut self, a: NodeId, rows: &[usize], out_rows: usize) -> Result<NodeId> {
        let (ar, ac) = self.shape_of(a);
        if rows.len() != ar {
            return Err(Error::shape(
                "scatter_rows",
                format!("{} indices for {} rows", rows.len(), ar),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= out_rows) {
            return Err(Error::shape(
                "scatter_rows",
                format!("target row {} out of range for {} rows", bad, out_rows),
            ));
        }
        let va = &self.values[a.index()];
        let mut out = DenseMatrix::zeros(out_rows, ac);
        for (i, &r) in rows.iter().enumerate() {
            out.as_mut_slice()[r * ac..(r + 1) * ac].copy_from_slice(va.row(i));
        }
        let out = self.push(out);
        self.ops.push(Op::ScatterRows { a, rows: rows.to_vec(), out });
        Ok(out)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape_of(a);
        let (br, bc) = self.shape_of(b);
        if ac != bc {
            return Err(Error::shape(
                "concat_rows",
                format!("{}x{} over {}x{}", ar, ac, br, bc),
            ));
        }
        let mut out = Vec::with_capacity((ar + br) * ac);
        out.extend_from_slice(self.values[a.index()].as_slice());
        out.extend_from_slice(self.values[b.index()].as_slice());
        let out = self.push(DenseMatrix::new_unchecked(ar + br, ac, out));
        self.ops.push(Op::ConcatRows { a, b, out });
        Ok(out)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let va = &self.values[a.index()];
        let (r, c) = va.shape();
        let out: Vec<f64> = va.as_slice().iter().map(|&x| f(x)).collect();
        self.push(DenseMatrix::new_unchecked(r, c, out))
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let va = &self.values[a.index()];
        let vb = &self.values[b.index()];
        let (r, c) = va.shape();
        let out: Vec<f64> = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(DenseMatrix::new_unchecked(r, c, out))
    }

    /// Replay the tape backward from `output`, seeding its gradient with
    /// `seed`. `output` must be scalar-valued (1×1).
    pub fn backward(&self, output: NodeId, seed: f64) -> Result<Gradients> {
        let (r, c) = self.shape_of(output);
        if (r, c) != (1, 1) {
            return Err(Error::contract(format!(
                "backward requires a scalar output node, got {}x{}",
                r, c
            )));
        }
        let mut grads: Vec<DenseMatrix> = self
            .values
            .iter()
            .map(|v| DenseMatrix::zeros(v.rows(), v.cols()))
            .collect();
        grads[output.index()].as_mut_slice()[0] = seed;

        // Ops were recorded in forward order; outputs always follow inputs,
        // so a reverse scan visits nodes in reverse topological order.
        for op in self.ops.iter().rev() {
            self.apply_vjp(op, &mut grads);
        }
        Ok(Gradients { grads })
    }

    // Inputs always precede the output node, so splitting the gradient
    // buffer at the output index yields disjoint mutable/shared views
    // without copying the upstream gradient.
    fn apply_vjp(&self, op: &Op, grads: &mut [DenseMatrix]) {
        match op {
            Op::Matmul { a, b, out } => {
                let (head, g) = split_grads(grads, *out);
                matmul_grad_a(g, &self.values[b.index()], &mut head[a.index()]);
                matmul_grad_b(&self.values[a.index()], g, &mut head[b.index()]);
            }
            Op::Add { a, b, out } => {
                let (head, g) = split_grads(grads, *out);
                accumulate(&mut head[a.index()], g.as_slice(), 1.0);
                accumulate(&mut head[b.index()], g.as_slice(), 1.0);
            }
            Op::Sub { a, b, out } => {
                let (head, g) = split_grads(grads, *out);
                accumulate(&mut head[a.index()], g.as_slice(), 1.0);
                accumulate(&mut head[b.index()], g.as_slice(), -1.0);
            }
            Op::MulElem { a, b, out } => {
                let (head, g) = split_grads(grads, *out);
                let va = self.values[a.index()].as_slice();
                let vb = self.values[b.index()].as_slice();
                if a == b {
                    for ((ga, &gi), &xi) in head[a.index()]
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(va)
                    {
                        *ga += 2.0 * gi * xi;
                    }
                } else {
                    for ((ga, &gi), &bi) in head[a.index()]
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(vb)
                    {
                        *ga += gi * bi;
                    }
                    for ((gb, &gi), &ai) in head[b.index()]
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(va)
                    {
                        *gb += gi * ai;
                    }
                }
            }
            Op::AffineScalar { a, mul, out, .. } => {
                let (head, g) = split_grads(grads, *out);
                accumulate(&mut head[a.index()], g.as_slice(), *mul);
            }
            Op::AddBroadcastCol { a, bias, out } => {
                let (head, g) = split_grads(grads, *out);
                let g = g.as_slice();
                accumulate(&mut head[a.index()], g, 1.0);
                let cols = self.values[a.index()].cols();
                let gb = head[bias.index()].as_mut_slice();
                for (i, gbi) in gb.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &gij in &g[i * cols..(i + 1) * cols] {
                        acc += gij;
                    }
                    *gbi += acc;
                }
            }
            Op::Tanh { a, out } => {
                self.unary_vjp(*a, *out, grads, |y, _| 1.0 - y * y);
            }
            Op::Sigmoid { a, out } => {
                self.unary_vjp(*a, *out, grads, |y, _| y * (1.0 - y));
            }
            Op::Exp { a, out } => {
                self.unary_vjp(*a, *out, grads, |y, _| y);
            }
            Op::Abs { a, out } => {
                // signum(0) = 1 here, which deliberately disagrees with the
                // central difference at the kink so checks flag it.
                self.unary_vjp(*a, *out, grads, |_, x| x.signum());
            }
            Op::Sum { a, out } => {
                let (head, g) = split_grads(grads, *out);
                let g = g.as_slice()[0];
                for ga in head[a.index()].as_mut_slice() {
                    *ga += g;
                }
            }
            Op::Dot { a, b, out } => {
                let (head, g) = split_grads(grads, *out);
                let g = g.as_slice()[0];
                let va = self.values[a.index()].as_slice();
                let vb = self.values[b.index()].as_slice();
                if a == b {
                    for (gi, &xi) in head[a.index()].as_mut_slice().iter_mut().zip(va) {
                        *gi += 2.0 * g * xi;
                    }
                } else {
                    for (gi, &yi) in head[a.index()].as_mut_slice().iter_mut().zip(vb) {
                        *gi += g * yi;
                    }
                    for (gi, &xi) in head[b.index()].as_mut_slice().iter_mut().zip(va) {
                        *gi += g * xi;
                    }
                }
            }
            Op::GatherRows { a, rows, out } => {
                let (head, g) = split_grads(grads, *out);
                let g = g.as_slice();
                let cols = self.values[a.index()].cols();
                let ga = head[a.index()].as_mut_slice();
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..cols {
                        ga[r * cols + j] += g[i * cols + j];
                    }
                }
            }
            Op::ScatterRows { a, rows, out } => {
                let (head, g) = split_grads(grads, *out);
                let g = g.as_slice();
                let cols = self.values[a.index()].cols();
                let ga = head[a.index()].as_mut_slice();
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..cols {
                        ga[i * cols + j] += g[r * cols + j];
                    }
                }
            }
            Op::ConcatRows { a, b, out } => {
                let (head, g) = split_grads(grads, *out);
                let g = g.as_slice();
                let na = self.values[a.index()].len();
                accumulate(&mut head[a.index()], &g[..na], 1.0);
                accumulate(&mut head[b.index()], &g[na..], 1.0);
            }
        }
    }

    fn unary_vjp(
        &self,
        a: NodeId,
        out: NodeId,
        grads: &mut [DenseMatrix],
        dydx: impl Fn(f64, f64) -> f64,
    ) {
        let (head, g) = split_grads(grads, out);
        let y = self.values[out.index()].as_slice();
        let x = self.values[a.index()].as_slice();
        let ga = head[a.index()].as_mut_slice();
        for i in 0..ga.len() {
            ga[i] += g.as_slice()[i] * dydx(y[i], x[i]);
        }
    }
}

fn split_grads(grads: &mut [DenseMatrix], out: NodeId) -> (&mut [DenseMatrix], &DenseMatrix) {
    let (head, tail) = grads.split_at_mut(out.index());
    (head, &tail[0])
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(target: &mut DenseMatrix, g: &[f64], scale: f64) {
    for (t, &gi) in target.as_mut_slice().iter_mut().zip(g) {
        *t += scale * gi;
    }
}
