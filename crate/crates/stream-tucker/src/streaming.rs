//! Snapshot generation for the three experimental regimes.
//!
//! A growth plan turns a fully materialized dataset into an ordered sequence
//! of snapshots. Each snapshot carries only the delta: the observations that
//! became visible at that step (the relative complement of consecutive
//! snapshot shapes) and the newly exposed side-matrix rows.

use crate::error::{Error, Result};
use crate::model::SideInfoSet;
use crate::optimizer::DeltaBlock;
use crate::tensor::{Shape, SparseTensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Regime {
    /// All modes may grow each step by fixed per-mode increments.
    MultiAspect,
    /// Only `stream_mode` grows, one slice per step.
    Streaming { stream_mode: usize },
    /// Full tensor every step, `passes` times.
    Batch { passes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthPlan {
    pub regime: Regime,
    pub start_dims: Shape,
    pub step_increments: Vec<usize>,
    pub full_dims: Shape,
}

impl GrowthPlan {
    pub fn multi_aspect(start: Shape, increments: Vec<usize>, full: Shape) -> Result<Self> {
        if start.order() != full.order() || increments.len() != full.order() {
            return Err(Error::ShapeMismatch(
                "start/increment/full order mismatch".into(),
            ));
        }
        if !start.fits_within(&full) {
            return Err(Error::InvalidParam(format!(
                "start dims {:?} exceed full dims {:?}",
                start.dims(),
                full.dims()
            )));
        }
        let degenerate = start == full;
        if !degenerate && increments.iter().all(|&s| s == 0) {
            return Err(Error::InvalidParam(
                "multi-aspect plan needs at least one positive increment".into(),
            ));
        }
        for (i, &inc) in increments.iter().enumerate() {
            if full.dims()[i] > start.dims()[i] && inc == 0 {
                return Err(Error::InvalidParam(format!(
                    "mode {i} must grow from {} to {} but has zero increment",
                    start.dims()[i],
                    full.dims()[i]
                )));
            }
        }
        Ok(GrowthPlan {
            regime: Regime::MultiAspect,
            start_dims: start,
            step_increments: increments,
            full_dims: full,
        })
    }

    pub fn streaming(full: Shape, stream_mode: usize) -> Result<Self> {
        if stream_mode >= full.order() {
            return Err(Error::ModeOutOfRange {
                mode: stream_mode,
                order: full.order(),
            });
        }
        let mut start = full.dims().to_vec();
        start[stream_mode] = 1;
        let mut increments = vec![0; full.order()];
        increments[stream_mode] = 1;
        Ok(GrowthPlan {
            regime: Regime::Streaming { stream_mode },
            start_dims: Shape::new(start)?,
            step_increments: increments,
            full_dims: full,
        })
    }

    pub fn batch(full: Shape, passes: usize) -> Result<Self> {
        if passes == 0 {
            return Err(Error::InvalidParam("batch passes must be >= 1".into()));
        }
        Ok(GrowthPlan {
            regime: Regime::Batch { passes },
            start_dims: full.clone(),
            step_increments: vec![0; full.order()],
            full_dims: full,
        })
    }

    /// Snapshot dims at step `t`: min(start + t * increment, full).
    pub fn dims_at(&self, t: usize) -> Vec<usize> {
        match self.regime {
            Regime::Batch { .. } => self.full_dims.dims().to_vec(),
            _ => self
                .start_dims
                .dims()
                .iter()
                .zip(&self.step_increments)
                .zip(self.full_dims.dims())
                .map(|((&s, &inc), &f)| f.min(s + t * inc))
                .collect(),
        }
    }

    /// Number of snapshots the plan emits.
    pub fn plan_steps(&self) -> usize {
        match self.regime {
            Regime::Batch { passes } => passes,
            Regime::Streaming { stream_mode } => self.full_dims.dims()[stream_mode],
            Regime::MultiAspect => {
                let mut max_t = 0usize;
                for i in 0..self.full_dims.order() {
                    let gap = self.full_dims.dims()[i] - self.start_dims.dims()[i];
                    if gap > 0 {
                        let inc = self.step_increments[i];
                        max_t = max_t.max(gap.div_ceil(inc));
                    }
                }
                max_t + 1
            }
        }
    }
}

/// One step of the sequence: the snapshot shape and its delta block.
#[derive(Debug, Clone)]
pub struct SnapshotView {
    pub step_index: usize,
    pub dims: Shape,
    pub delta: DeltaBlock,
}

fn inside(index: &[usize], dims: &[usize]) -> bool {
    index.iter().zip(dims).all(|(&i, &d)| i < d)
}

/// Splits the dataset into per-step delta blocks following the plan.
///
/// Each observation lands in the first step whose snapshot shape contains
/// it, so the deltas partition the observation set for the growth regimes.
/// The batch regime instead emits the full observation set `passes` times.
pub fn emit_snapshots(
    dataset: &SparseTensor,
    side: &SideInfoSet,
    plan: &GrowthPlan,
) -> Result<Vec<SnapshotView>> {
    if dataset.shape() != &plan.full_dims {
        return Err(Error::ShapeMismatch(format!(
            "dataset shape {:?} differs from plan full dims {:?}",
            dataset.shape().dims(),
            plan.full_dims.dims()
        )));
    }
    if side.order() != dataset.shape().order() {
        return Err(Error::ShapeMismatch(
            "side-info set order differs from tensor order".into(),
        ));
    }
    for (i, s) in side.modes().iter().enumerate() {
        if s.rows() != dataset.shape().dims()[i] {
            return Err(Error::ShapeMismatch(format!(
                "mode {i}: side rows {} differ from tensor dim {}",
                s.rows(),
                dataset.shape().dims()[i]
            )));
        }
    }

    let steps = plan.plan_steps();
    let order = dataset.shape().order();
    let mut out = Vec::with_capacity(steps);

    if let Regime::Batch { passes } = plan.regime {
        let full = plan.full_dims.dims().to_vec();
        for t in 0..passes {
            let ranges = if t == 0 {
                full.iter().map(|&d| 0..d).collect()
            } else {
                full.iter().map(|&d| d..d).collect()
            };
            out.push(SnapshotView {
                step_index: t,
                dims: plan.full_dims.clone(),
                delta: DeltaBlock::new(dataset.clone(), ranges),
            });
        }
        return Ok(out);
    }

    let mut prev = vec![0usize; order];
    for t in 0..steps {
        let dims = plan.dims_at(t);
        let entries: Vec<(Vec<usize>, f64)> = dataset
            .iter()
            .filter(|(index, _)| inside(index, &dims) && !inside(index, &prev))
            .map(|(index, v)| (index.to_vec(), v))
            .collect();
        let shape = Shape::new(dims.clone())?;
        let observations = SparseTensor::new(shape.clone(), entries)?;
        let ranges = prev.iter().zip(&dims).map(|(&p, &d)| p..d).collect();
        out.push(SnapshotView {
            step_index: t,
            dims: shape,
            delta: DeltaBlock::new(observations, ranges),
        });
        prev = dims;
    }
    Ok(out)
}
