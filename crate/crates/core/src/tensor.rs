//! Dense order-d tensor algebra: matricization, mode products, entrywise
//! operations, and the fiber/slice l1 masses that quantify heteroskedasticity.
//!
//! Storage is always row-major (last index fastest). Matricization along mode
//! k orders the remaining modes increasingly, last fastest, so that
//! `dematricize(matricize(x, k), k, shape)` round-trips exactly.

use crate::error::{Error, Result};

/// Tolerance for the density-tensor flag: entries nonnegative and
/// `|l1 - 1| <= DENSITY_TOL`.
pub const DENSITY_TOL: f64 = 1e-12;

/// Dimensions (p_1, ..., p_d) of an order-d tensor, d >= 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(format!(
                "tensor order must be at least 2, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("all dimensions must be positive"));
        }
        let mut total: usize = 1;
        for &p in &dims {
            total = total
                .checked_mul(p)
                .ok_or_else(|| Error::invalid("tensor size overflows the index type"))?;
        }
        Ok(Shape { dims })
    }

    /// Tensor order d.
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // every dim is positive
    }

    pub fn max_dim(&self) -> usize {
        *self.dims.iter().max().unwrap()
    }

    /// Product of all dimensions except `mode` (p_{-k}).
    pub fn codim(&self, mode: usize) -> usize {
        self.dims
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != mode)
            .map(|(_, &p)| p)
            .product()
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::invalid(format!(
                "mode {} out of range for order-{} tensor",
                mode,
                self.order()
            )));
        }
        Ok(())
    }

    /// Row-major linear index of a multi-index.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let mut lin = 0;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[k]);
            lin = lin * self.dims[k] + i;
        }
        lin
    }

    /// Multi-index of a row-major linear index.
    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.order()];
        for k in (0..self.order()).rev() {
            idx[k] = lin % self.dims[k];
            lin /= self.dims[k];
        }
        idx
    }
}

/// Neumaier compensated sum; keeps long accumulations at O(eps) error.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Dense order-d tensor of f64 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: Shape) -> Self {
        let len = shape.len();
        DenseTensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn constant(shape: Shape, value: f64) -> Self {
        let len = shape.len();
        DenseTensor {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match shape size {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.shape.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let lin = self.shape.linear_index(idx);
        self.data[lin] = value;
    }

    /// Outer product of d vectors: entry (i_1,...,i_d) = prod_k v_k[i_k].
    pub fn outer_product(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::invalid(
                "outer product needs at least two vectors".to_string(),
            ));
        }
        if vectors.iter().any(|v| v.is_empty()) {
            return Err(Error::invalid("outer product vectors must be nonempty"));
        }
        let shape = Shape::new(vectors.iter().map(|v| v.len()).collect())?;
        let mut out = DenseTensor::zeros(shape);
        let mut idx = vec![0usize; vectors.len()];
        for lin in 0..out.data.len() {
            let mut prod = 1.0;
            for (k, v) in vectors.iter().enumerate() {
                prod *= v[idx[k]];
            }
            out.data[lin] = prod;
            increment(&mut idx, out.shape.dims());
        }
        Ok(out)
    }

    /// Elementwise product; shapes must match.
    pub fn hadamard(&self, other: &DenseTensor) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "hadamard shape mismatch: {:?} vs {:?}",
                self.shape.dims(),
                other.shape.dims()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Entrywise reciprocal; errors on the first zero entry, naming it.
    pub fn entrywise_inverse(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for (lin, &v) in self.data.iter().enumerate() {
            if v == 0.0 {
                return Err(Error::domain(format!(
                    "entrywise inverse of a zero entry at index {:?}",
                    self.shape.multi_index(lin)
                )));
            }
            data.push(1.0 / v);
        }
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Mode-k matricization: rows indexed by the mode-k coordinate, columns
    /// by the remaining modes in increasing order, last fastest.
    pub fn matricize(&self, mode: usize) -> Result<Matrix> {
        self.shape.check_mode(mode)?;
        let rows = self.shape.dim(mode);
        let cols = self.shape.codim(mode);
        let col_strides = matricize_col_strides(&self.shape, mode);
        let mut m = Matrix::zeros(rows, cols);
        let mut idx = vec![0usize; self.shape.order()];
        for lin in 0..self.data.len() {
            let mut col = 0;
            for (k, &i) in idx.iter().enumerate() {
                if k != mode {
                    col += i * col_strides[k];
                }
            }
            m.data[idx[mode] * cols + col] = self.data[lin];
            increment(&mut idx, self.shape.dims());
        }
        Ok(m)
    }

    /// Inverse of [`matricize`]: rebuild the tensor from a mode-k unfolding.
    pub fn dematricize(m: &Matrix, mode: usize, shape: &Shape) -> Result<Self> {
        shape.check_mode(mode)?;
        if m.rows != shape.dim(mode) || m.cols != shape.codim(mode) {
            return Err(Error::invalid(format!(
                "matrix {}x{} inconsistent with mode-{} unfolding of {:?}",
                m.rows,
                m.cols,
                mode,
                shape.dims()
            )));
        }
        let col_strides = matricize_col_strides(shape, mode);
        let mut out = DenseTensor::zeros(shape.clone());
        let mut idx = vec![0usize; shape.order()];
        for lin in 0..out.data.len() {
            let mut col = 0;
            for (k, &i) in idx.iter().enumerate() {
                if k != mode {
                    col += i * col_strides[k];
                }
            }
            out.data[lin] = m.data[idx[mode] * m.cols + col];
            increment(&mut idx, shape.dims());
        }
        Ok(out)
    }

    /// Mode-k product with a matrix b (b.cols must equal dims[k]); satisfies
    /// `matricize(result, k) = b * matricize(self, k)`.
    pub fn mode_product(&self, mode: usize, b: &Matrix) -> Result<Self> {
        self.shape.check_mode(mode)?;
        if b.cols != self.shape.dim(mode) {
            return Err(Error::invalid(format!(
                "mode-{} product: matrix has {} columns but dimension is {}",
                mode,
                b.cols,
                self.shape.dim(mode)
            )));
        }
        let unfolded = self.matricize(mode)?;
        let product = b.matmul(&unfolded)?;
        let mut new_dims = self.shape.dims().to_vec();
        new_dims[mode] = b.rows;
        DenseTensor::dematricize(&product, mode, &Shape::new(new_dims)?)
    }

    /// Entrywise l1 norm.
    pub fn norm_l1(&self) -> f64 {
        compensated_sum(self.data.iter().map(|v| v.abs()))
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> f64 {
        compensated_sum(self.data.iter().map(|v| v * v)).sqrt()
    }

    /// Entrywise maximum absolute value.
    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// l1 mass of one mode-`mode` fiber, identified by its column index in
    /// the mode-`mode` matricization.
    pub fn fiber_l1_at(&self, mode: usize, fiber: usize) -> Result<f64> {
        self.shape.check_mode(mode)?;
        let cols = self.shape.codim(mode);
        if fiber >= cols {
            return Err(Error::invalid(format!(
                "fiber index {} out of range for mode {} ({} fibers)",
                fiber, mode, cols
            )));
        }
        let m = self.matricize(mode)?;
        let mut acc = CompensatedSum::default();
        for h in 0..m.rows {
            acc.add(m.get(h, fiber).abs());
        }
        Ok(acc.value())
    }

    /// Largest l1 mass over all fibers of all modes.
    pub fn fiber_l1_max(&self) -> f64 {
        let mut best = 0.0f64;
        for mode in 0..self.shape.order() {
            let m = self.matricize(mode).expect("mode in range");
            for col in 0..m.cols {
                let mut acc = CompensatedSum::default();
                for h in 0..m.rows {
                    acc.add(m.get(h, col).abs());
                }
                best = best.max(acc.value());
            }
        }
        best
    }

    /// l1 mass of the slice fixing coordinate `index` in mode `mode`. For a
    /// density tensor this is the marginal probability of that category.
    pub fn slice_l1_at(&self, mode: usize, index: usize) -> Result<f64> {
        self.shape.check_mode(mode)?;
        if index >= self.shape.dim(mode) {
            return Err(Error::invalid(format!(
                "slice index {} out of range for mode {} (dim {})",
                index,
                mode,
                self.shape.dim(mode)
            )));
        }
        Ok(self.slice_sums(mode)[index])
    }

    /// Largest l1 mass over all slices of all modes.
    pub fn slice_l1_max(&self) -> f64 {
        (0..self.shape.order())
            .flat_map(|mode| self.slice_sums(mode))
            .fold(0.0, f64::max)
    }

    /// All mode-`mode` slice l1 masses at once (one pass over the data).
    pub fn slice_sums(&self, mode: usize) -> Vec<f64> {
        let p = self.shape.dim(mode);
        let mut sums = vec![CompensatedSum::default(); p];
        let mut idx = vec![0usize; self.shape.order()];
        for lin in 0..self.data.len() {
            sums[idx[mode]].add(self.data[lin].abs());
            increment(&mut idx, self.shape.dims());
        }
        sums.into_iter().map(|s| s.value()).collect()
    }

    /// True when all entries are nonnegative and the l1 mass is 1 within
    /// [`DENSITY_TOL`].
    pub fn is_density(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0) && (self.norm_l1() - 1.0).abs() <= DENSITY_TOL
    }
}

/// Advance a row-major multi-index odometer (last index fastest).
#[inline]
pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Column strides of the mode-k matricization: remaining modes in increasing
/// order, last fastest.
fn matricize_col_strides(shape: &Shape, mode: usize) -> Vec<usize> {
    let d = shape.order();
    let mut strides = vec![0usize; d];
    let mut acc = 1;
    for k in (0..d).rev() {
        if k == mode {
            continue;
        }
        strides[k] = acc;
        acc *= shape.dim(k);
    }
    strides
}

/// Dense row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
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

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "matmul dimension mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row_out = &mut out.data[i * other.cols..(i + 1) * other.cols];
                let row_b = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in row_out.iter_mut().zip(row_b) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix of the rows: self * self^T.
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let mut acc = CompensatedSum::default();
                for k in 0..self.cols {
                    acc.add(self.data[i * self.cols + k] * self.data[j * self.cols + k]);
                }
                let v = acc.value();
                out.data[i * self.rows + j] = v;
                out.data[j * self.rows + i] = v;
            }
        }
        out
    }

    /// Zero the diagonal, keep everything else; idempotent.
    pub fn off_diag_projection(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::invalid(format!(
                "off-diagonal projection needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] = 0.0;
        }
        Ok(out)
    }

    /// (self + self^T) / 2; requires square.
    pub fn symmetrized(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::invalid("symmetrization needs a square matrix"));
        }
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        compensated_sum(self.data.iter().map(|v| v * v)).sqrt()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// First `ncols` columns as a new matrix.
    pub fn truncate_cols(&self, ncols: usize) -> Matrix {
        assert!(ncols <= self.cols);
        Matrix::from_fn(self.rows, ncols, |i, j| self.get(i, j))
    }
}
