//! Dense row-major `f64` matrices.
//!
//! This is the parameter and activation storage for everything in the crate.
//! Vectors are represented as single-column matrices. All entries are finite
//! by construction when built through the checked constructors.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Checked constructor: length must be `rows * cols` and every entry finite.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "from_values",
                format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite entry {} at index {} in {}x{} matrix",
                values[i], i, rows, cols
            )));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    /// Internal constructor for trusted values.
    pub(crate) fn new_unchecked(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        DenseMatrix { rows, cols, values }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_column(v: &[f64]) -> Self {
        DenseMatrix {
            rows: v.len(),
            cols: 1,
            values: v.to_vec(),
        }
    }

    /// Column-major assembly of a batch: `columns[j]` becomes column `j`.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let cols = columns.len();
        if cols == 0 {
            return Err(Error::contract("from_columns: empty column set"));
        }
        let rows = columns[0].len();
        let mut values = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::shape(
                    "from_columns",
                    format!("column {} has length {}, expected {}", j, col.len(), rows),
                ));
            }
            for i in 0..rows {
                values[i * cols + j] = col[i];
            }
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self * other`, standard product.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    /// Matrix-vector product; `v.len()` must equal `self.cols`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!("{}x{} times vector of length {}", self.rows, self.cols, v.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o = acc;
        }
        Ok(out)
    }
}

/// `out += a * b` accumulated in `k`-order (i, k, j loops) so a single-column
/// product is bit-identical to `matvec`.
pub(crate) fn matmul_into(a: &DenseMatrix, b: &DenseMatrix, out: &mut DenseMatrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.values[i * n..(i + 1) * n];
        for (k, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b.values[k * n..(k + 1) * n];
            for j in 0..n {
                out_row[j] += a_ik * b_row[j];
            }
        }
    }
}

/// `da += g * b^T` without materializing the transpose.
pub(crate) fn matmul_grad_a(g: &DenseMatrix, b: &DenseMatrix, da: &mut DenseMatrix) {
    debug_assert_eq!(g.cols, b.cols);
    debug_assert_eq!(da.rows, g.rows);
    debug_assert_eq!(da.cols, b.rows);
    for i in 0..g.rows {
        let g_row = g.row(i);
        let da_row = &mut da.values[i * b.rows..(i + 1) * b.rows];
        for (k, slot) in da_row.iter_mut().enumerate() {
            let b_row = b.row(k);
            let mut acc = 0.0;
            for (x, y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            *slot += acc;
        }
    }
}

/// `db += a^T * g` without materializing the transpose.
pub(crate) fn matmul_grad_b(a: &DenseMatrix, g: &DenseMatrix, db: &mut DenseMatrix) {
    debug_assert_eq!(a.rows, g.rows);
    debug_assert_eq!(db.rows, a.cols);
    debug_assert_eq!(db.cols, g.cols);
    let n = g.cols;
    for i in 0..a.rows {
        let a_row = a.row(i);
        let g_row = g.row(i);
        for (k, &a_ik) in a_row.iter().enumerate() {
            let db_row = &mut db.values[k * n..(k + 1) * n];
            for j in 0..n {
                db_row[j] += a_ik * g_row[j];
            }
        }
    }
}
