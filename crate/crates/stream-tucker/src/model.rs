//! Inductive Tucker model: side-information matrices, factor/core variables,
//! sparse reconstruction and the regularized completion objective.
//!
//! Predictions are entries of `G x1 (A_1 U_1) x2 ... xN (A_N U_N)`: each mode
//! couples a side matrix `A_i` (I_i x M_i) with a learned factor `U_i`
//! (M_i x r_i), so model size depends on M_i rather than the mode dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, DenseTensor, Shape, SparseTensor};

/// Side-information matrix for one mode.
///
/// `Identity(n)` marks a mode without side information and behaves as the
/// n x n identity (so M_i = I_i for that mode). Row counts may be truncated
/// at use sites to the current snapshot dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum SideInfo {
    Identity(usize),
    Dense(DenseMatrix),
    Sparse {
        rows: usize,
        cols: usize,
        entries: Vec<(usize, usize, f64)>,
    },
}

impl SideInfo {
    pub fn sparse(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::IndexOutOfBounds {
                    index: vec![r, c],
                    dims: vec![rows, cols],
                });
            }
        }
        Ok(SideInfo::Sparse {
            rows,
            cols,
            entries,
        })
    }

    /// Full row count I_i.
    pub fn rows(&self) -> usize {
        match self {
            SideInfo::Identity(n) => *n,
            SideInfo::Dense(m) => m.rows(),
            SideInfo::Sparse { rows, .. } => *rows,
        }
    }

    /// Feature count M_i (the row count of the coupled factor).
    pub fn cols(&self) -> usize {
        match self {
            SideInfo::Identity(n) => *n,
            SideInfo::Dense(m) => m.cols(),
            SideInfo::Sparse { cols, .. } => *cols,
        }
    }

    /// Materializes `A[..active_rows, ..] * u`, the projected factor for the
    /// current snapshot. For `Identity` this is the leading rows of `u`.
    pub fn project(&self, u: &DenseMatrix, active_rows: usize) -> Result<DenseMatrix> {
        if active_rows > self.rows() {
            return Err(Error::ShapeMismatch(format!(
                "requested {active_rows} side rows but only {} available",
                self.rows()
            )));
        }
        if u.rows() != self.cols() {
            return Err(Error::ShapeMismatch(format!(
                "factor has {} rows, side info has {} columns",
                u.rows(),
                self.cols()
            )));
        }
        let r = u.cols();
        match self {
            SideInfo::Identity(_) => {
                DenseMatrix::new(active_rows, r, u.values()[..active_rows * r].to_vec())
            }
            SideInfo::Dense(a) => {
                let mut out = DenseMatrix::zeros(active_rows, r);
                for i in 0..active_rows {
                    for k in 0..a.cols() {
                        let w = a.get(i, k);
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..r {
                            out.values_mut()[i * r + j] += w * u.get(k, j);
                        }
                    }
                }
                Ok(out)
            }
            SideInfo::Sparse { entries, .. } => {
                let mut out = DenseMatrix::zeros(active_rows, r);
                for &(row, col, w) in entries {
                    if row >= active_rows {
                        continue;
                    }
                    for j in 0..r {
                        out.values_mut()[row * r + j] += w * u.get(col, j);
                    }
                }
                Ok(out)
            }
        }
    }

    /// `A[..active_rows, ..]^T * w` where `w` is `active_rows x r`.
    pub fn transpose_apply(&self, w: &DenseMatrix, active_rows: usize) -> Result<DenseMatrix> {
        if w.rows() != active_rows || active_rows > self.rows() {
            return Err(Error::ShapeMismatch(format!(
                "transpose_apply: got {} rows, active {active_rows}, side has {}",
                w.rows(),
                self.rows()
            )));
        }
        let r = w.cols();
        let mut out = DenseMatrix::zeros(self.cols(), r);
        match self {
            SideInfo::Identity(_) => {
                out.values_mut()[..active_rows * r].copy_from_slice(w.values());
            }
            SideInfo::Dense(a) => {
                for i in 0..active_rows {
                    for k in 0..a.cols() {
                        let v = a.get(i, k);
                        if v == 0.0 {
                            continue;
                        }
                        for j in 0..r {
                            out.values_mut()[k * r + j] += v * w.get(i, j);
                        }
                    }
                }
            }
            SideInfo::Sparse { entries, .. } => {
                for &(row, col, v) in entries {
                    if row >= active_rows {
                        continue;
                    }
                    for j in 0..r {
                        out.values_mut()[col * r + j] += v * w.get(row, j);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense materialization of the leading `active_rows` rows.
    pub fn to_dense(&self, active_rows: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(active_rows, self.cols());
        match self {
            SideInfo::Identity(_) => {
                for i in 0..active_rows {
                    out.set(i, i, 1.0);
                }
            }
            SideInfo::Dense(a) => {
                for i in 0..active_rows {
                    for j in 0..a.cols() {
                        out.set(i, j, a.get(i, j));
                    }
                }
            }
            SideInfo::Sparse { entries, .. } => {
                for &(r, c, v) in entries {
                    if r < active_rows {
                        out.set(r, c, v);
                    }
                }
            }
        }
        out
    }
}

/// One side matrix per mode of the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoSet {
    per_mode: Vec<SideInfo>,
}

impl SideInfoSet {
    pub fn new(per_mode: Vec<SideInfo>) -> Result<Self> {
        if per_mode.len() < 2 {
            return Err(Error::InvalidParam(
                "need one side-info matrix per mode, at least two modes".into(),
            ));
        }
        Ok(SideInfoSet { per_mode })
    }

    /// All modes without side information, sized to `dims`.
    pub fn identity(dims: &[usize]) -> Self {
        SideInfoSet {
            per_mode: dims.iter().map(|&d| SideInfo::Identity(d)).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.per_mode.len()
    }

    pub fn mode(&self, i: usize) -> &SideInfo {
        &self.per_mode[i]
    }

    pub fn modes(&self) -> &[SideInfo] {
        &self.per_mode
    }

    pub fn feature_counts(&self) -> Vec<usize> {
        self.per_mode.iter().map(|s| s.cols()).collect()
    }

    pub fn row_counts(&self) -> Vec<usize> {
        self.per_mode.iter().map(|s| s.rows()).collect()
    }
}

/// Tucker variables: core tensor G (r_1 x ... x r_N) and per-mode factors
/// U_i (M_i x r_i).
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    pub core: DenseTensor,
    pub factors: Vec<DenseMatrix>,
    ranks: Vec<usize>,
}

impl TuckerModel {
    pub fn new(core: DenseTensor, factors: Vec<DenseMatrix>) -> Result<Self> {
        let ranks = core.shape().dims().to_vec();
        if factors.len() != ranks.len() {
            return Err(Error::ShapeMismatch(format!(
                "core has {} modes but {} factors given",
                ranks.len(),
                factors.len()
            )));
        }
        for (i, f) in factors.iter().enumerate() {
            if f.cols() != ranks[i] {
                return Err(Error::ShapeMismatch(format!(
                    "factor {i} has {} columns, core mode {i} has rank {}",
                    f.cols(),
                    ranks[i]
                )));
            }
        }
        Ok(TuckerModel {
            core,
            factors,
            ranks,
        })
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn order(&self) -> usize {
        self.ranks.len()
    }
}

/// Run hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lambda_g: f64,
    pub lambda_i: Vec<f64>,
    /// Gradient step size; fixed for the whole run.
    pub gamma: f64,
    /// Inner iterations K per time step.
    pub inner_steps: usize,
    pub nonnegative: bool,
    pub seed: u64,
    /// Reuse the factor-gradient residual for the core gradient instead of
    /// recomputing it with the updated factors.
    pub stale_core_residual: bool,
    pub threads: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda_g: 1e-3,
            lambda_i: Vec::new(),
            gamma: 1e-3,
            inner_steps: 1,
            nonnegative: false,
            seed: 0,
            stale_core_residual: false,
            threads: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, order: usize) -> Result<()> {
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::InvalidParam("inner_steps (K) must be >= 1".into()));
        }
        if self.lambda_g < 0.0 {
            return Err(Error::InvalidParam("lambda_g must be >= 0".into()));
        }
        if self.lambda_i.len() != order {
            return Err(Error::InvalidParam(format!(
                "expected {} lambda_i values, got {}",
                order,
                self.lambda_i.len()
            )));
        }
        if self.lambda_i.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidParam("lambda_i must be >= 0".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidParam("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lambda_for_mode(&self, i: usize) -> f64 {
        self.lambda_i[i]
    }
}

/// Initializes factors and core i.i.d. uniform [0, 1) from a seeded
/// deterministic generator. Factors are filled mode by mode, then the core,
/// all row-major; the same seed reproduces the model bit for bit.
pub fn init_model(ranks: &[usize], side: &SideInfoSet, hp: &Hyperparams) -> Result<TuckerModel> {
    if ranks.len() != side.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks given for {} modes",
            ranks.len(),
            side.order()
        )));
    }
    if ranks.contains(&0) {
        return Err(Error::InvalidParam("ranks must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut factors = Vec::with_capacity(ranks.len());
    for (i, &r) in ranks.iter().enumerate() {
        let m = side.mode(i).cols();
        if r > m {
            eprintln!("warning: rank {r} exceeds feature count {m} on mode {i}");
        }
        let values: Vec<f64> = (0..m * r).map(|_| rng.gen::<f64>()).collect();
        factors.push(DenseMatrix::new(m, r, values)?);
    }
    let core_shape = Shape::new(ranks.to_vec())?;
    let values: Vec<f64> = (0..core_shape.num_elements())
        .map(|_| rng.gen::<f64>())
        .collect();
    let core = DenseTensor::new(core_shape, values)?;
    TuckerModel::new(core, factors)
}

/// Materializes the projected factors P_i = A_i U_i, truncated to `dims`.
pub fn projected_factors(
    model: &TuckerModel,
    side: &SideInfoSet,
    dims: &[usize],
) -> Result<Vec<DenseMatrix>> {
    if dims.len() != model.order() || side.order() != model.order() {
        return Err(Error::ShapeMismatch(format!(
            "dims/side/model order mismatch: {} vs {} vs {}",
            dims.len(),
            side.order(),
            model.order()
        )));
    }
    model
        .factors
        .iter()
        .zip(side.modes())
        .zip(dims)
        .map(|((u, a), &d)| a.project(u, d))
        .collect()
}

/// Single-entry reconstruction given the projected factors:
/// sum over core indices j of G[j] * prod_i P_i[index_i, j_i].
pub fn predict_with_projected(
    core: &DenseTensor,
    projected: &[DenseMatrix],
    index: &[usize],
) -> f64 {
    let ranks: &[usize] = core.shape().dims();
    let n = ranks.len();
    let mut sum = 0.0;
    let mut j = vec![0usize; n];
    for &g in core.values() {
        if g != 0.0 {
            let mut prod = g;
            for k in 0..n {
                prod *= projected[k].get(index[k], j[k]);
            }
            sum += prod;
        }
        // row-major odometer over the core indices
        for k in (0..n).rev() {
            j[k] += 1;
            if j[k] < ranks[k] {
                break;
            }
            j[k] = 0;
        }
    }
    sum
}

/// Reconstruction at one index of the current snapshot.
pub fn predict_entry(
    model: &TuckerModel,
    side: &SideInfoSet,
    dims: &[usize],
    index: &[usize],
) -> Result<f64> {
    if index.len() != dims.len() || index.iter().zip(dims).any(|(&i, &d)| i >= d) {
        return Err(Error::IndexOutOfBounds {
            index: index.to_vec(),
            dims: dims.to_vec(),
        });
    }
    let projected = projected_factors(model, side, dims)?;
    Ok(predict_with_projected(&model.core, &projected, index))
}

/// Regularized completion objective: squared residual over observed entries
/// plus lambda_g ||G||_F^2 + sum_i lambda_i ||U_i||_F^2.
pub fn objective(
    model: &TuckerModel,
    side: &SideInfoSet,
    data: &SparseTensor,
    hp: &Hyperparams,
) -> Result<f64> {
    hp.validate(model.order())?;
    let dims = data.shape().dims();
    let projected = projected_factors(model, side, dims)?;
    let mut total = 0.0;
    for (index, x) in data.iter() {
        let r = x - predict_with_projected(&model.core, &projected, index);
        total += r * r;
    }
    total += hp.lambda_g * model.core.frob_sq();
    for (i, u) in model.factors.iter().enumerate() {
        total += hp.lambda_for_mode(i) * u.frob_sq();
    }
    Ok(total)
}
