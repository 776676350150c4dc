//! Dense linear algebra, activations, loss, Adam and finite-difference
//! gradient checking.
//!
//! Everything here works on row-major `f64` matrices. Matrix products skip
//! zero entries of the left operand, which keeps bag-of-words attribute
//! matrices cheap without a separate sparse type for them. The normalized
//! adjacency has both a dense form and a CSR form used by the models.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NumericError;
use crate::graph::Graph;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        if data.len() != rows * cols {
            return Err(NumericError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumericError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumericError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Glorot-uniform initialisation, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the selected rows, in order, into a new matrix.
    pub fn select_rows(&self, ids: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(ids.len(), self.cols);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(id));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, NumericError> {
        self.expect_shape(other.shape(), "elementwise")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn expect_shape(&self, shape: (usize, usize), what: &str) -> Result<(), NumericError> {
        if self.shape() != shape {
            return Err(NumericError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(())
    }

    /// `self · other`. Zero entries of `self` are skipped.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        if self.cols != other.rows {
            return Err(NumericError::Shape(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = other.cols;
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`. Zero entries of `self` are skipped.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        if self.rows != other.rows {
            return Err(NumericError::Shape(format!(
                "t_matmul: {:?}ᵀ x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = other.cols;
        let mut out = Matrix::zeros(self.cols, n);
        for i in 0..self.rows {
            let b_row = other.row(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[k * n..(k + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        if self.cols != other.cols {
            return Err(NumericError::Shape(format!(
                "matmul_t: {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Adds `bias` (length `cols`) to every row in place.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        debug_assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            for (v, &b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn argmax_row(&self, r: usize) -> usize {
        argmax(self.row(r))
    }
}

/// Row-addressable input for models that consume one row per sample.
pub trait RowSource {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// Writes row `r` into `out` (length `n_cols`).
    fn fill_row(&self, r: usize, out: &mut [f64]);

    /// Dense matrix of the selected rows.
    fn gather(&self, ids: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(ids.len(), self.n_cols());
        for (i, &id) in ids.iter().enumerate() {
            self.fill_row(id, m.row_mut(i));
        }
        m
    }
}

impl RowSource for Matrix {
    fn n_rows(&self) -> usize {
        self.rows
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    fn fill_row(&self, r: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(r));
    }

    fn gather(&self, ids: &[usize]) -> Matrix {
        self.select_rows(ids)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Compressed sparse row matrix, used for graph propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; columns must be ascending.
    pub fn from_row_lists(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row_entries(r) {
                m.set(r, c, v);
            }
        }
        m
    }

    /// `self · dense`.
    pub fn matmul(&self, dense: &Matrix) -> Result<Matrix, NumericError> {
        if self.n_cols != dense.rows() {
            return Err(NumericError::Shape(format!(
                "sparse matmul: {}x{} x {:?}",
                self.n_rows,
                self.n_cols,
                dense.shape()
            )));
        }
        let n = dense.cols();
        let mut out = Matrix::zeros(self.n_rows, n);
        for r in 0..self.n_rows {
            let o_row = out.row_mut(r);
            for (c, a) in self.row_entries(r) {
                for (o, &b) in o_row.iter_mut().zip(dense.row(c)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`.
    pub fn t_matmul(&self, dense: &Matrix) -> Result<Matrix, NumericError> {
        if self.n_rows != dense.rows() {
            return Err(NumericError::Shape(format!(
                "sparse t_matmul: ({}x{})ᵀ x {:?}",
                self.n_rows,
                self.n_cols,
                dense.shape()
            )));
        }
        let n = dense.cols();
        let mut out = Matrix::zeros(self.n_cols, n);
        for r in 0..self.n_rows {
            let d_row = dense.row(r);
            for (c, a) in self.row_entries(r) {
                for (o, &b) in out.row_mut(c).iter_mut().zip(d_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

fn self_loop_degrees(graph: &Graph) -> Vec<f64> {
    (0..graph.node_count())
        .map(|u| graph.degree(u) as f64 + 1.0)
        .collect()
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` as a dense matrix.
pub fn normalized_adjacency(graph: &Graph) -> Matrix {
    normalized_adjacency_sparse(graph).to_dense()
}

/// CSR form of [`normalized_adjacency`]; entries are bitwise identical.
///
/// Each entry is `1 / sqrt(d_u * d_v)`, which is symmetric bit for bit
/// because the product of degrees commutes exactly.
pub fn normalized_adjacency_sparse(graph: &Graph) -> CsrMatrix {
    let deg = self_loop_degrees(graph);
    let rows = (0..graph.node_count())
        .map(|u| {
            let mut row: Vec<(usize, f64)> = graph
                .neighbors(u)
                .iter()
                .copied()
                .chain(std::iter::once(u))
                .map(|v| (v, 1.0 / (deg[u] * deg[v]).sqrt()))
                .collect();
            row.sort_unstable_by_key(|&(v, _)| v);
            row
        })
        .collect();
    CsrMatrix::from_row_lists(graph.node_count(), rows)
}

/// Row-normalised adjacency without self loops: row `u` averages the
/// neighbours of `u`. Isolated nodes get an all-zero row.
pub fn mean_adjacency_sparse(graph: &Graph) -> CsrMatrix {
    let rows = (0..graph.node_count())
        .map(|u| {
            let nbrs = graph.neighbors(u);
            let w = if nbrs.is_empty() {
                0.0
            } else {
                1.0 / nbrs.len() as f64
            };
            nbrs.iter().map(|&v| (v, w)).collect()
        })
        .collect();
    CsrMatrix::from_row_lists(graph.node_count(), rows)
}

/// Softmax applied to each row, max-shifted.
pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Inverted-dropout mask: kept entries carry `1 / (1 - rate)`, dropped ones 0.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    scale: Matrix,
}

impl DropoutMask {
    pub fn sample<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let data = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Self {
            scale: Matrix { rows, cols, data },
        }
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        m.hadamard(&self.scale).expect("dropout mask shape")
    }
}

/// Inverted dropout. Identity when `training` is false or `rate` is 0.
pub fn dropout(m: &Matrix, rate: f64, seed: u64, training: bool) -> Matrix {
    if !training || rate == 0.0 {
        return m.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DropoutMask::sample(m.rows(), m.cols(), rate, &mut rng).apply(m)
}

const LOG_CLAMP: f64 = 1e-12;

/// Mean of `-ln p[true class]` over the labeled rows, `p` clamped at 1e-12.
pub fn cross_entropy(
    posteriors: &Matrix,
    labeled_ids: &[usize],
    labels: &[usize],
) -> Result<f64, NumericError> {
    if labeled_ids.is_empty() {
        return Err(NumericError::Config("empty labeled set".into()));
    }
    if labeled_ids.len() != labels.len() {
        return Err(NumericError::Shape(format!(
            "{} labeled ids but {} labels",
            labeled_ids.len(),
            labels.len()
        )));
    }
    let total: f64 = labeled_ids
        .iter()
        .zip(labels)
        .map(|(&id, &y)| -posteriors.get(id, y).max(LOG_CLAMP).ln())
        .sum();
    Ok(total / labeled_ids.len() as f64)
}

/// Gradient of mean cross-entropy w.r.t. pre-softmax logits:
/// `(p - onehot(y)) / n` on labeled rows, zero elsewhere.
pub fn softmax_cross_entropy_grad(
    posteriors: &Matrix,
    labeled_ids: &[usize],
    labels: &[usize],
) -> Matrix {
    let n = labeled_ids.len() as f64;
    let mut grad = Matrix::zeros(posteriors.rows(), posteriors.cols());
    for (&id, &y) in labeled_ids.iter().zip(labels) {
        let g = grad.row_mut(id);
        for (gv, &p) in g.iter_mut().zip(posteriors.row(id)) {
            *gv = p / n;
        }
        g[y] -= 1.0 / n;
    }
    grad
}

/// Adam optimiser state for one parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_param(param: &Matrix) -> Self {
        Self::new(param.rows(), param.cols())
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<(), NumericError> {
    if param.shape() != grad.shape() || param.shape() != state.first_moment.shape() {
        return Err(NumericError::Shape(format!(
            "adam: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.first_moment.shape()
        )));
    }
    if !grad.is_finite() {
        return Err(NumericError::NonFinite("gradient".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((p, &g), mi), vi) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = b1 * *mi + (1.0 - b1) * g;
        *vi = b2 * *vi + (1.0 - b2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Step for central differences.
pub const FD_STEP: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` returns the loss and one gradient per parameter matrix.
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<F>(loss_fn: F, params: &[Matrix], tolerance: f64) -> GradCheckReport
where
    F: Fn(&[Matrix]) -> (f64, Vec<Matrix>),
{
    let (_, analytic) = loss_fn(params);
    let mut work: Vec<Matrix> = params.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0;
    for p in 0..params.len() {
        for i in 0..params[p].data().len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + FD_STEP;
            let (up, _) = loss_fn(&work);
            work[p].data_mut()[i] = orig - FD_STEP;
            let (down, _) = loss_fn(&work);
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[p].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
            checked += 1;
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        entries_checked: checked,
        tolerance,
    }
}
