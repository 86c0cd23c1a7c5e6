//! Sparse and dense tensor primitives.
//!
//! COO sparse storage with canonical (lexicographic) entry order, row-major
//! dense tensors, mode-n unfolding and mode-n products. The unfolding orders
//! the non-unfolded modes backward-cyclically so that
//! `unfold(G x1 P1 ... xN PN, i) == P_i * unfold(G, i) * kron(P, skip i)^T`
//! holds with the same Kronecker ordering used by the gradient kernels.

use crate::error::{Error, Result};

/// Tensor shape (I_1, ..., I_N), N >= 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParam(format!(
                "tensor order must be >= 2, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidParam(format!("zero dimension in {dims:?}")));
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.dims.len() && index.iter().zip(&self.dims).all(|(&i, &d)| i < d)
    }

    /// Componentwise `self <= other`.
    pub fn fits_within(&self, other: &Shape) -> bool {
        self.order() == other.order() && self.dims.iter().zip(&other.dims).all(|(&a, &b)| a <= b)
    }

    /// Row-major linear offset of `index`.
    pub fn linear_index(&self, index: &[usize]) -> usize {
        debug_assert!(self.contains(index));
        let mut lin = 0;
        for (i, &d) in index.iter().zip(&self.dims) {
            lin = lin * d + i;
        }
        lin
    }
}

/// Iterates all multi-indices of a shape in row-major order.
pub struct IndexIter {
    dims: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl IndexIter {
    pub fn new(shape: &Shape) -> Self {
        IndexIter {
            dims: shape.dims().to_vec(),
            current: vec![0; shape.order()],
            done: false,
        }
    }
}

impl Iterator for IndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        for k in (0..self.dims.len()).rev() {
            self.current[k] += 1;
            if self.current[k] < self.dims[k] {
                return Some(out);
            }
            self.current[k] = 0;
        }
        self.done = true;
        Some(out)
    }
}

/// Observed entries of a partially observed tensor in COO format.
///
/// The stored index set is the observation set; entries are kept in
/// lexicographic order and duplicates are rejected at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    shape: Shape,
    entries: Vec<(Vec<usize>, f64)>,
}

impl SparseTensor {
    pub fn new(shape: Shape, mut entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        for (index, _) in &entries {
            if !shape.contains(index) {
                return Err(Error::IndexOutOfBounds {
                    index: index.clone(),
                    dims: shape.dims().to_vec(),
                });
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicateEntry {
                    index: pair[0].0.clone(),
                });
            }
        }
        Ok(SparseTensor { shape, entries })
    }

    pub fn empty(shape: Shape) -> Self {
        SparseTensor {
            shape,
            entries: Vec::new(),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in canonical (lexicographic) order.
    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.entries.iter().map(|(i, v)| (i.as_slice(), *v))
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    /// Same index set, values produced by `f(index, value)`.
    pub fn map_values(&self, mut f: impl FnMut(&[usize], f64) -> f64) -> SparseTensor {
        SparseTensor {
            shape: self.shape.clone(),
            entries: self
                .entries
                .iter()
                .map(|(i, v)| (i.clone(), f(i, *v)))
                .collect(),
        }
    }

    /// Reinterprets the entries over a (larger or equal) shape.
    pub fn with_shape(&self, shape: Shape) -> Result<SparseTensor> {
        SparseTensor::new(shape, self.entries.clone())
    }
}

/// Dense tensor, row-major contiguous values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_elements() {
            return Err(Error::ShapeMismatch(format!(
                "dense tensor of shape {:?} needs {} values, got {}",
                shape.dims(),
                shape.num_elements(),
                values.len()
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.num_elements();
        DenseTensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.values[self.shape.linear_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let lin = self.shape.linear_index(index);
        self.values[lin] = value;
    }

    pub fn frob_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.values[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.values[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.values[i * other.cols + j] += a * other.values[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        out
    }

    pub fn frob_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Non-unfolded modes ordered slowest-to-fastest for the mode-`mode`
/// unfolding: (mode-1, ..., 0, N-1, ..., mode+1).
pub(crate) fn unfold_mode_order(order: usize, mode: usize) -> Vec<usize> {
    (0..mode).rev().chain(((mode + 1)..order).rev()).collect()
}

/// Mode-n unfolding. Rows index the unfolded mode; columns run over the
/// remaining modes in the backward-cyclic order above.
pub fn matricize(t: &DenseTensor, mode: usize) -> Result<DenseMatrix> {
    let order = t.shape().order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    let dims = t.shape().dims();
    let rows = dims[mode];
    let cols = t.shape().num_elements() / rows;
    let col_modes = unfold_mode_order(order, mode);
    let mut out = DenseMatrix::zeros(rows, cols);
    for (lin, index) in IndexIter::new(t.shape()).enumerate() {
        let mut c = 0;
        for &m in &col_modes {
            c = c * dims[m] + index[m];
        }
        out.values[index[mode] * cols + c] = t.values[lin];
    }
    Ok(out)
}

/// Inverse of [`matricize`]: folds a mode-n unfolding back into a tensor of
/// the given shape.
pub fn refold(m: &DenseMatrix, shape: &Shape, mode: usize) -> Result<DenseTensor> {
    let order = shape.order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    let dims = shape.dims();
    if m.rows() != dims[mode] || m.cols() != shape.num_elements() / dims[mode] {
        return Err(Error::ShapeMismatch(format!(
            "cannot refold {}x{} into {:?} along mode {mode}",
            m.rows(),
            m.cols(),
            dims
        )));
    }
    let col_modes = unfold_mode_order(order, mode);
    let mut out = DenseTensor::zeros(shape.clone());
    for (lin, index) in IndexIter::new(shape).enumerate() {
        let mut c = 0;
        for &mm in &col_modes {
            c = c * dims[mm] + index[mm];
        }
        out.values[lin] = m.values[index[mode] * m.cols() + c];
    }
    Ok(out)
}

/// Mode-n product `t x_mode m`; replaces `dims[mode]` with `m.rows()`.
pub fn mode_n_product(t: &DenseTensor, m: &DenseMatrix, mode: usize) -> Result<DenseTensor> {
    let order = t.shape().order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    if m.cols() != t.shape().dims()[mode] {
        return Err(Error::ShapeMismatch(format!(
            "mode-{mode} product: matrix has {} cols, tensor dim is {}",
            m.cols(),
            t.shape().dims()[mode]
        )));
    }
    let unfolded = matricize(t, mode)?;
    let product = m.matmul(&unfolded)?;
    let mut new_dims = t.shape().dims().to_vec();
    new_dims[mode] = m.rows();
    refold(&product, &Shape::new(new_dims)?, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(dims: &[usize]) -> Shape {
        Shape::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn matricize_singleton() {
        let t = DenseTensor::new(shape(&[1, 1, 1]), vec![5.0]).unwrap();
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m.rows(), 1);
        assert_eq!(m.cols(), 1);
        assert_eq!(m.get(0, 0), 5.0);
    }

    #[test]
    fn matricize_matrix_mode0_is_identity() {
        let t = DenseTensor::new(shape(&[2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn refold_roundtrip_all_modes() {
        let s = shape(&[3, 4, 2]);
        let values: Vec<f64> = (0..24).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let t = DenseTensor::new(s.clone(), values).unwrap();
        for mode in 0..3 {
            let m = matricize(&t, mode).unwrap();
            let back = refold(&m, &s, mode).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn mode_product_identity() {
        let s = shape(&[2, 3, 2]);
        let values: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let t = DenseTensor::new(s, values).unwrap();
        for mode in 0..3 {
            let id = DenseMatrix::identity(t.shape().dims()[mode]);
            let out = mode_n_product(&t, &id, mode).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_product_scalar() {
        let t = DenseTensor::new(shape(&[1, 1, 1]), vec![2.0]).unwrap();
        let m = DenseMatrix::new(1, 1, vec![3.0]).unwrap();
        let out = mode_n_product(&t, &m, 0).unwrap();
        assert_eq!(out.values(), &[6.0]);
    }

    #[test]
    fn mode_product_commutes_across_modes() {
        // (G x1 P1) x2 P2 == (G x2 P2) x1 P1, checked against the direct
        // entrywise sum.
        let s = shape(&[2, 3, 2]);
        let g_values: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let g = DenseTensor::new(s, g_values).unwrap();
        let p1 = DenseMatrix::new(4, 2, (0..8).map(|i| (i as f64) * 0.5 - 1.0).collect()).unwrap();
        let p2 = DenseMatrix::new(2, 3, (0..6).map(|i| (i as f64) * 0.25).collect()).unwrap();

        let a = mode_n_product(&mode_n_product(&g, &p1, 0).unwrap(), &p2, 1).unwrap();
        let b = mode_n_product(&mode_n_product(&g, &p2, 1).unwrap(), &p1, 0).unwrap();
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_entries_canonical_order() {
        let s = shape(&[2, 2, 2]);
        let entries = vec![
            (vec![1, 0, 1], 3.0),
            (vec![0, 1, 0], 1.0),
            (vec![0, 0, 1], 2.0),
        ];
        let t = SparseTensor::new(s, entries).unwrap();
        let indices: Vec<_> = t.iter().map(|(i, _)| i.to_vec()).collect();
        assert_eq!(indices, vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 1]]);
        assert_eq!(t.nnz(), 3);
    }

    #[test]
    fn sparse_empty_and_singleton() {
        let t = SparseTensor::empty(shape(&[2, 2]));
        assert_eq!(t.iter().count(), 0);
        let t = SparseTensor::new(shape(&[1, 1, 1]), vec![(vec![0, 0, 0], 1.0)]).unwrap();
        assert_eq!(t.iter().count(), 1);
    }

    #[test]
    fn sparse_rejects_out_of_bounds_and_duplicates() {
        let s = shape(&[2, 2]);
        assert!(matches!(
            SparseTensor::new(s.clone(), vec![(vec![2, 0], 1.0)]),
            Err(Error::IndexOutOfBounds { .. })
        ));
        assert!(matches!(
            SparseTensor::new(s, vec![(vec![0, 0], 1.0), (vec![0, 0], 2.0)]),
            Err(Error::DuplicateEntry { .. })
        ));
    }

    #[test]
    fn matricize_mode_out_of_range() {
        let t = DenseTensor::zeros(shape(&[2, 2]));
        assert!(matches!(
            matricize(&t, 2),
            Err(Error::ModeOutOfRange { .. })
        ));
    }
}
