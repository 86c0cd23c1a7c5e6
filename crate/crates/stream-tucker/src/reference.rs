//! Dense reference implementations used for verification.
//!
//! Everything here goes through explicit matricization, Kronecker products
//! and full dense reconstruction. None of it shares code with the sparse
//! entry-accumulation kernels in `optimizer`, so the two routes check each
//! other. The `gradcheck` subcommand and the acceptance suite both run
//! against these oracles.

use crate::error::Result;
use crate::model::{objective, projected_factors, Hyperparams, SideInfoSet, TuckerModel};
use crate::optimizer::GradientBuffers;
use crate::tensor::{
    matricize, mode_n_product, unfold_mode_order, DenseMatrix, DenseTensor, SparseTensor,
};

/// Kronecker product `a (x) b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let rows = a.rows() * b.rows();
    let cols = a.cols() * b.cols();
    let mut out = DenseMatrix::zeros(rows, cols);
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let av = a.get(i, j);
            for k in 0..b.rows() {
                for l in 0..b.cols() {
                    out.set(i * b.rows() + k, j * b.cols() + l, av * b.get(k, l));
                }
            }
        }
    }
    out
}

/// Kronecker product of all matrices except `skip`, taken in the
/// backward-cyclic order (skip-1, ..., 0, N-1, ..., skip+1).
pub fn kron_excluding(mats: &[DenseMatrix], skip: usize) -> DenseMatrix {
    let order = unfold_mode_order(mats.len(), skip);
    let mut iter = order.iter();
    let first = *iter.next().expect("at least two modes");
    let mut acc = mats[first].clone();
    for &m in iter {
        acc = kron(&acc, &mats[m]);
    }
    acc
}

/// Full dense reconstruction `G x1 P_1 x2 ... xN P_N`.
pub fn reconstruct(core: &DenseTensor, projected: &[DenseMatrix]) -> Result<DenseTensor> {
    let mut t = core.clone();
    for (mode, p) in projected.iter().enumerate() {
        t = mode_n_product(&t, p, mode)?;
    }
    Ok(t)
}

/// Dense residual tensor: x - reconstruction on observed indices, zero
/// elsewhere (the sparsity operator applied to the residual).
pub fn dense_residual(
    model: &TuckerModel,
    side: &SideInfoSet,
    block: &SparseTensor,
) -> Result<DenseTensor> {
    let dims = block.shape().dims();
    let projected = projected_factors(model, side, dims)?;
    let recon = reconstruct(&model.core, &projected)?;
    let mut out = DenseTensor::zeros(block.shape().clone());
    for (index, x) in block.iter() {
        out.set(index, x - recon.get(index));
    }
    Ok(out)
}

/// Gradients via the dense matricized route: for each mode,
/// `-2 A_i^T R_(i) K_i G_(i)^T + 2 lambda_i U_i` with `K_i` the explicit
/// backward-cyclic Kronecker product of the other projected factors, and
/// `-2 R x1 P_1^T ... xN P_N^T + 2 lambda_g G` for the core.
pub fn gradients_dense(
    model: &TuckerModel,
    side: &SideInfoSet,
    block: &SparseTensor,
    hp: &Hyperparams,
) -> Result<GradientBuffers> {
    hp.validate(model.order())?;
    let dims = block.shape().dims();
    let projected = projected_factors(model, side, dims)?;
    let residual = dense_residual(model, side, block)?;

    let mut d_factors = Vec::with_capacity(model.order());
    #[allow(clippy::needless_range_loop)] // i is the mode index, not just a subscript
    for i in 0..model.order() {
        let a_dense = side.mode(i).to_dense(dims[i]);
        let r_i = matricize(&residual, i)?;
        let k_i = kron_excluding(&projected, i);
        let g_i = matricize(&model.core, i)?;
        let mut du = a_dense
            .transpose()
            .matmul(&r_i)?
            .matmul(&k_i)?
            .matmul(&g_i.transpose())?;
        for v in du.values_mut() {
            *v *= -2.0;
        }
        let lambda = hp.lambda_for_mode(i);
        for (acc, u) in du.values_mut().iter_mut().zip(model.factors[i].values()) {
            *acc += 2.0 * lambda * u;
        }
        d_factors.push(du);
    }

    let mut t = residual;
    for (mode, p) in projected.iter().enumerate() {
        t = mode_n_product(&t, &p.transpose(), mode)?;
    }
    let mut d_core = t;
    for v in d_core.values_mut() {
        *v *= -2.0;
    }
    for (acc, g) in d_core.values_mut().iter_mut().zip(model.core.values()) {
        *acc += 2.0 * hp.lambda_g * g;
    }
    Ok(GradientBuffers { d_core, d_factors })
}

/// Central finite differences of the objective over every variable, with
/// per-parameter step `h = base * (1 + |theta|)`.
pub fn gradients_finite_difference(
    model: &TuckerModel,
    side: &SideInfoSet,
    block: &SparseTensor,
    hp: &Hyperparams,
    base_step: f64,
) -> Result<GradientBuffers> {
    let mut work = model.clone();
    let mut out = GradientBuffers::zeros_like(model);

    for f in 0..model.order() {
        for k in 0..model.factors[f].values().len() {
            let theta = model.factors[f].values()[k];
            let h = base_step * (1.0 + theta.abs());
            work.factors[f].values_mut()[k] = theta + h;
            let plus = objective(&work, side, block, hp)?;
            work.factors[f].values_mut()[k] = theta - h;
            let minus = objective(&work, side, block, hp)?;
            work.factors[f].values_mut()[k] = theta;
            out.d_factors[f].values_mut()[k] = (plus - minus) / (2.0 * h);
        }
    }
    for k in 0..model.core.values().len() {
        let theta = model.core.values()[k];
        let h = base_step * (1.0 + theta.abs());
        work.core.values_mut()[k] = theta + h;
        let plus = objective(&work, side, block, hp)?;
        work.core.values_mut()[k] = theta - h;
        let minus = objective(&work, side, block, hp)?;
        work.core.values_mut()[k] = theta;
        out.d_core.values_mut()[k] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Max absolute difference between two gradient buffer sets.
pub fn max_abs_diff(a: &GradientBuffers, b: &GradientBuffers) -> f64 {
    let mut max = 0.0f64;
    for (x, y) in a.d_core.values().iter().zip(b.d_core.values()) {
        max = max.max((x - y).abs());
    }
    for (fa, fb) in a.d_factors.iter().zip(&b.d_factors) {
        for (x, y) in fa.values().iter().zip(fb.values()) {
            max = max.max((x - y).abs());
        }
    }
    max
}

/// Max relative difference, with |a - b| / max(1, |a|, |b|) per element.
pub fn max_rel_diff(a: &GradientBuffers, b: &GradientBuffers) -> f64 {
    fn rel(x: f64, y: f64) -> f64 {
        (x - y).abs() / 1.0f64.max(x.abs()).max(y.abs())
    }
    let mut max = 0.0f64;
    for (x, y) in a.d_core.values().iter().zip(b.d_core.values()) {
        max = max.max(rel(*x, *y));
    }
    for (fa, fb) in a.d_factors.iter().zip(&b.d_factors) {
        for (x, y) in fa.values().iter().zip(fb.values()) {
            max = max.max(rel(*x, *y));
        }
    }
    max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{refold, IndexIter, Shape};

    #[test]
    fn kron_small() {
        let a = DenseMatrix::new(1, 2, vec![2.0, 3.0]).unwrap();
        let b = DenseMatrix::new(2, 1, vec![1.0, 4.0]).unwrap();
        let k = kron(&a, &b);
        assert_eq!(k.rows(), 2);
        assert_eq!(k.cols(), 2);
        assert_eq!(k.values(), &[2.0, 3.0, 8.0, 12.0]);
    }

    /// The unfolding and the backward-cyclic Kronecker ordering must be a
    /// matched pair: unfold(G x1 P1 ... xN PN, i) == P_i G_(i) K_i^T.
    #[test]
    fn unfolding_matches_kron_ordering() {
        let core_shape = Shape::new(vec![2, 3, 2]).unwrap();
        let g_values: Vec<f64> = (0..12)
            .map(|i| ((i * 17 % 9) as f64) * 0.31 - 1.2)
            .collect();
        let g = DenseTensor::new(core_shape.clone(), g_values).unwrap();
        let ps = vec![
            DenseMatrix::new(
                4,
                2,
                (0..8).map(|i| ((i * 3 % 7) as f64) * 0.4 - 1.0).collect(),
            )
            .unwrap(),
            DenseMatrix::new(
                2,
                3,
                (0..6).map(|i| ((i * 5 % 8) as f64) * 0.25 - 0.7).collect(),
            )
            .unwrap(),
            DenseMatrix::new(
                3,
                2,
                (0..6).map(|i| ((i * 11 % 6) as f64) * 0.5 - 1.1).collect(),
            )
            .unwrap(),
        ];
        let x = reconstruct(&g, &ps).unwrap();
        for mode in 0..3 {
            let lhs = matricize(&x, mode).unwrap();
            let k = kron_excluding(&ps, mode);
            let rhs = ps[mode]
                .matmul(&matricize(&g, mode).unwrap())
                .unwrap()
                .matmul(&k.transpose())
                .unwrap();
            assert_eq!(lhs.rows(), rhs.rows());
            assert_eq!(lhs.cols(), rhs.cols());
            for (a, b) in lhs.values().iter().zip(rhs.values()) {
                assert!((a - b).abs() < 1e-10, "mode {mode}: {a} vs {b}");
            }
        }
    }

    /// Entry-by-entry triple sum agrees with the unfolding-based product.
    #[test]
    fn reconstruction_matches_entrywise_sum() {
        let g = DenseTensor::new(
            Shape::new(vec![2, 2, 2]).unwrap(),
            (0..8).map(|i| ((i * 13 % 5) as f64) - 2.0).collect(),
        )
        .unwrap();
        let ps = vec![
            DenseMatrix::new(3, 2, (0..6).map(|i| (i as f64) * 0.2).collect()).unwrap(),
            DenseMatrix::new(2, 2, (0..4).map(|i| (i as f64) * 0.5 - 0.5).collect()).unwrap(),
            DenseMatrix::new(4, 2, (0..8).map(|i| ((7 - i) as f64) * 0.1).collect()).unwrap(),
        ];
        let x = reconstruct(&g, &ps).unwrap();
        for index in IndexIter::new(x.shape()) {
            let mut sum = 0.0;
            for j in IndexIter::new(g.shape()) {
                let mut term = g.get(&j);
                for k in 0..3 {
                    term *= ps[k].get(index[k], j[k]);
                }
                sum += term;
            }
            assert!((x.get(&index) - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn refold_inverts_matricize_4d() {
        let s = Shape::new(vec![5, 4, 3, 5]).unwrap();
        let values: Vec<f64> = (0..300).map(|i| ((i * 29 % 101) as f64) * 0.013).collect();
        let t = DenseTensor::new(s.clone(), values).unwrap();
        for mode in 0..4 {
            let m = matricize(&t, mode).unwrap();
            assert_eq!(refold(&m, &s, mode).unwrap(), t);
        }
    }
}
