//! Gradient kernels and the per-time-step update loop.
//!
//! Gradients of the completion objective are accumulated in a single pass
//! over the observed entries; the Kronecker product of projected factors is
//! never materialized. Each observed entry contributes a rank-(r_1...r_N)
//! term to the core gradient and one row update per mode, which keeps the
//! per-step cost at O(sum_i I_i M_i r_i + |Omega| r_1...r_N).

use std::ops::Range;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{
    objective, predict_with_projected, projected_factors, Hyperparams, SideInfoSet, TuckerModel,
};
use crate::tensor::{DenseMatrix, DenseTensor, SparseTensor};

/// Entries are processed in fixed-size chunks whose partial buffers are
/// merged in chunk order, so results do not depend on the thread count.
const CHUNK: usize = 1024;

/// Gradient buffers congruent with the model variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffers {
    pub d_core: DenseTensor,
    pub d_factors: Vec<DenseMatrix>,
}

impl GradientBuffers {
    pub fn zeros_like(model: &TuckerModel) -> Self {
        GradientBuffers {
            d_core: DenseTensor::zeros(model.core.shape().clone()),
            d_factors: model
                .factors
                .iter()
                .map(|f| DenseMatrix::zeros(f.rows(), f.cols()))
                .collect(),
        }
    }
}

/// Newly arrived data for one time step: observations over the current
/// snapshot shape plus the per-mode row ranges newly exposed in the side
/// matrices.
#[derive(Debug, Clone)]
pub struct DeltaBlock {
    pub observations: SparseTensor,
    pub new_side_rows: Vec<Range<usize>>,
}

impl DeltaBlock {
    pub fn new(observations: SparseTensor, new_side_rows: Vec<Range<usize>>) -> Self {
        DeltaBlock {
            observations,
            new_side_rows,
        }
    }

    pub fn dims(&self) -> &[usize] {
        self.observations.shape().dims()
    }
}

/// Residual x - prediction at every observed index of `block`.
pub fn residual_at_observed(
    model: &TuckerModel,
    side: &SideInfoSet,
    block: &SparseTensor,
) -> Result<SparseTensor> {
    let projected = projected_factors(model, side, block.shape().dims())?;
    Ok(block.map_values(|index, x| x - predict_with_projected(&model.core, &projected, index)))
}

/// Per-chunk partial accumulators for the entry pass.
struct PartialBuffers {
    d_core: Vec<f64>,
    /// Row-space accumulators W_i (dims[i] x r_i); the factor gradient is
    /// A_i^T W_i.
    w: Vec<DenseMatrix>,
}

fn entry_pass_chunk(
    core: &DenseTensor,
    projected: &[DenseMatrix],
    dims: &[usize],
    entries: &[(Vec<usize>, f64)],
    want_factors: bool,
) -> PartialBuffers {
    let ranks = core.shape().dims().to_vec();
    let n = ranks.len();
    let core_len = core.shape().num_elements();
    let mut d_core = vec![0.0; core_len];
    let mut w: Vec<DenseMatrix> = if want_factors {
        dims.iter()
            .zip(&ranks)
            .map(|(&d, &r)| DenseMatrix::zeros(d, r))
            .collect()
    } else {
        Vec::new()
    };

    let mut j = vec![0usize; n];
    let mut factors = vec![0.0; n];
    let mut prefix = vec![0.0; n + 1];
    let mut suffix = vec![0.0; n + 1];

    for (index, residual) in entries {
        let scale = -2.0 * residual;
        j.fill(0);
        for (lin, &g) in core.values().iter().enumerate() {
            for k in 0..n {
                factors[k] = projected[k].get(index[k], j[k]);
            }
            // prefix[k] = f_0..f_{k-1}, suffix[k] = f_k..f_{n-1}
            prefix[0] = 1.0;
            for k in 0..n {
                prefix[k + 1] = prefix[k] * factors[k];
            }
            suffix[n] = 1.0;
            for k in (0..n).rev() {
                suffix[k] = suffix[k + 1] * factors[k];
            }
            d_core[lin] += scale * prefix[n];
            if want_factors && g != 0.0 {
                for k in 0..n {
                    let excl = prefix[k] * suffix[k + 1];
                    let cell = w[k].get(index[k], j[k]) + scale * g * excl;
                    w[k].set(index[k], j[k], cell);
                }
            }
            for k in (0..n).rev() {
                j[k] += 1;
                if j[k] < ranks[k] {
                    break;
                }
                j[k] = 0;
            }
        }
    }
    PartialBuffers { d_core, w }
}

/// Runs the entry pass over all observed entries, chunked and merged in a
/// fixed order. Returns the data-term core gradient and the W_i buffers.
fn entry_pass(
    core: &DenseTensor,
    projected: &[DenseMatrix],
    residual: &SparseTensor,
    want_factors: bool,
    threads: usize,
) -> (DenseTensor, Vec<DenseMatrix>) {
    let dims = residual.shape().dims();
    let chunks: Vec<&[(Vec<usize>, f64)]> = residual.entries().chunks(CHUNK).collect();
    let partials: Vec<PartialBuffers> = if threads > 1 && chunks.len() > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build thread pool");
        pool.install(|| {
            chunks
                .par_iter()
                .map(|c| entry_pass_chunk(core, projected, dims, c, want_factors))
                .collect()
        })
    } else {
        chunks
            .iter()
            .map(|c| entry_pass_chunk(core, projected, dims, c, want_factors))
            .collect()
    };

    let mut d_core = DenseTensor::zeros(core.shape().clone());
    let ranks = core.shape().dims();
    let mut w: Vec<DenseMatrix> = if want_factors {
        dims.iter()
            .zip(ranks)
            .map(|(&d, &r)| DenseMatrix::zeros(d, r))
            .collect()
    } else {
        Vec::new()
    };
    for p in partials {
        for (acc, v) in d_core.values_mut().iter_mut().zip(&p.d_core) {
            *acc += v;
        }
        for (wk, pk) in w.iter_mut().zip(&p.w) {
            for (acc, v) in wk.values_mut().iter_mut().zip(pk.values()) {
                *acc += v;
            }
        }
    }
    (d_core, w)
}

fn check_congruent(model: &TuckerModel, side: &SideInfoSet, block: &SparseTensor) -> Result<()> {
    let dims = block.shape().dims();
    if dims.len() != model.order() {
        return Err(Error::ShapeMismatch(format!(
            "block order {} vs model order {}",
            dims.len(),
            model.order()
        )));
    }
    for (i, (&d, s)) in dims.iter().zip(side.modes()).enumerate() {
        if d > s.rows() {
            return Err(Error::ShapeMismatch(format!(
                "mode {i}: snapshot dim {d} exceeds side rows {}",
                s.rows()
            )));
        }
    }
    Ok(())
}

/// Full gradient of the objective on `block`: data term accumulated from a
/// single residual, regularizer terms always included.
pub fn gradients(
    model: &TuckerModel,
    side: &SideInfoSet,
    block: &SparseTensor,
    hp: &Hyperparams,
) -> Result<GradientBuffers> {
    hp.validate(model.order())?;
    check_congruent(model, side, block)?;
    let dims = block.shape().dims();
    let projected = projected_factors(model, side, dims)?;
    let residual =
        block.map_values(|index, x| x - predict_with_projected(&model.core, &projected, index));

    let (mut d_core, w) = entry_pass(&model.core, &projected, &residual, true, hp.threads);
    for (g, acc) in model.core.values().iter().zip(d_core.values_mut()) {
        *acc += 2.0 * hp.lambda_g * g;
    }
    let mut d_factors = Vec::with_capacity(model.order());
    for (i, wk) in w.iter().enumerate() {
        let mut du = side.mode(i).transpose_apply(wk, dims[i])?;
        let lambda = hp.lambda_for_mode(i);
        for (acc, u) in du.values_mut().iter_mut().zip(model.factors[i].values()) {
            *acc += 2.0 * lambda * u;
        }
        d_factors.push(du);
    }
    Ok(GradientBuffers { d_core, d_factors })
}

/// One gradient step on every variable; clamps to the nonnegative orthant
/// when running the nonnegative variant.
pub fn apply_update(model: &mut TuckerModel, grads: &GradientBuffers, hp: &Hyperparams) {
    let clamp = hp.nonnegative;
    for (u, du) in model.factors.iter_mut().zip(&grads.d_factors) {
        for (x, g) in u.values_mut().iter_mut().zip(du.values()) {
            *x -= hp.gamma * g;
            if clamp && *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    for (x, g) in model
        .core
        .values_mut()
        .iter_mut()
        .zip(grads.d_core.values())
    {
        *x -= hp.gamma * g;
        if clamp && *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Result of one time step: objective on the delta block after the final
/// inner iteration, plus wall time.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub objective: f64,
    pub elapsed: Duration,
}

/// Runs the K-iteration inner loop for one time step, in place.
///
/// Within an iteration the factor gradients come from the residual at the
/// iteration start; factors are updated first, then the core gradient is
/// computed from a fresh residual with the updated factors (set
/// `hp.stale_core_residual` to reuse the stale one instead).
pub fn step(
    model: &mut TuckerModel,
    side: &SideInfoSet,
    delta: &DeltaBlock,
    hp: &Hyperparams,
) -> Result<StepOutcome> {
    hp.validate(model.order())?;
    check_congruent(model, side, &delta.observations)?;
    let start = Instant::now();
    let block = &delta.observations;
    let dims = block.shape().dims();

    for _ in 0..hp.inner_steps {
        let projected = projected_factors(model, side, dims)?;
        let residual =
            block.map_values(|index, x| x - predict_with_projected(&model.core, &projected, index));
        let (stale_d_core, w) = entry_pass(&model.core, &projected, &residual, true, hp.threads);

        let mut factor_grads = Vec::with_capacity(model.order());
        for (i, wk) in w.iter().enumerate() {
            let mut du = side.mode(i).transpose_apply(wk, dims[i])?;
            let lambda = hp.lambda_for_mode(i);
            for (acc, u) in du.values_mut().iter_mut().zip(model.factors[i].values()) {
                *acc += 2.0 * lambda * u;
            }
            factor_grads.push(du);
        }
        for (u, du) in model.factors.iter_mut().zip(&factor_grads) {
            for (x, g) in u.values_mut().iter_mut().zip(du.values()) {
                *x -= hp.gamma * g;
                if hp.nonnegative && *x < 0.0 {
                    *x = 0.0;
                }
            }
        }

        let mut d_core = if hp.stale_core_residual {
            stale_d_core
        } else {
            let projected = projected_factors(model, side, dims)?;
            let residual = block
                .map_values(|index, x| x - predict_with_projected(&model.core, &projected, index));
            entry_pass(&model.core, &projected, &residual, false, hp.threads).0
        };
        for (g, acc) in model.core.values().iter().zip(d_core.values_mut()) {
            *acc += 2.0 * hp.lambda_g * g;
        }
        for (x, g) in model.core.values_mut().iter_mut().zip(d_core.values()) {
            *x -= hp.gamma * g;
            if hp.nonnegative && *x < 0.0 {
                *x = 0.0;
            }
        }
    }

    let objective = objective(model, side, block, hp)?;
    if !objective.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(StepOutcome {
        objective,
        elapsed: start.elapsed(),
    })
}
