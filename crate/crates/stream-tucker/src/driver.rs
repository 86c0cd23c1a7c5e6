//! End-to-end run drivers shared by the CLI and the acceptance suite.

use crate::error::Result;
use crate::eval::{self, ClusterReport, Labels, MetricsRecord};
use crate::model::{init_model, Hyperparams, SideInfoSet, TuckerModel};
use crate::optimizer;
use crate::streaming::{emit_snapshots, GrowthPlan};
use crate::tensor::SparseTensor;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Record wall time per step; off for byte-reproducible CSV output.
    pub record_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_timing: true,
        }
    }
}

/// Output of one completion run over a growth plan.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<MetricsRecord>,
    /// Per-step test-set sizes (entries visible inside the snapshot shape).
    pub test_sizes: Vec<usize>,
    pub model: TuckerModel,
}

impl RunResult {
    pub fn averaged_test_rmse(&self) -> Option<f64> {
        eval::average_test_rmse(&self.records, None)
    }
}

fn restrict(t: &SparseTensor, dims: &[usize]) -> Result<SparseTensor> {
    let entries = t
        .iter()
        .filter(|(index, _)| index.iter().zip(dims).all(|(&i, &d)| i < d))
        .map(|(index, v)| (index.to_vec(), v))
        .collect();
    SparseTensor::new(crate::tensor::Shape::new(dims.to_vec())?, entries)
}

/// Trains over the plan's snapshots; after each step evaluates train and
/// test RMSE over the entries visible inside the current snapshot shape.
pub fn run_completion(
    ranks: &[usize],
    side: &SideInfoSet,
    train: &SparseTensor,
    test: Option<&SparseTensor>,
    plan: &GrowthPlan,
    hp: &Hyperparams,
    opts: &RunOptions,
) -> Result<RunResult> {
    let mut model = init_model(ranks, side, hp)?;
    let snapshots = emit_snapshots(train, side, plan)?;
    let mut records = Vec::with_capacity(snapshots.len());
    let mut test_sizes = Vec::with_capacity(snapshots.len());

    for snap in &snapshots {
        let outcome = optimizer::step(&mut model, side, &snap.delta, hp)?;
        let dims = snap.dims.dims();

        let train_visible = restrict(train, dims)?;
        let train_rmse = if train_visible.is_empty() {
            None
        } else {
            Some(eval::rmse(&model, side, &train_visible)?)
        };
        let (test_rmse, test_size) = match test {
            Some(test) => {
                let visible = restrict(test, dims)?;
                let n = visible.nnz();
                let r = if visible.is_empty() {
                    None
                } else {
                    Some(eval::rmse(&model, side, &visible)?)
                };
                (r, n)
            }
            None => (None, 0),
        };

        records.push(MetricsRecord {
            step: snap.step_index,
            train_rmse,
            test_rmse,
            objective: outcome.objective,
            elapsed_ms: opts
                .record_timing
                .then_some(outcome.elapsed.as_millis() as u64),
        });
        test_sizes.push(test_size);
    }
    Ok(RunResult {
        records,
        test_sizes,
        model,
    })
}

/// Output of an unsupervised clustering run.
#[derive(Debug, Clone)]
pub struct ClusterRunResult {
    /// (step, average purity) per snapshot.
    pub per_step_purity: Vec<(usize, f64)>,
    pub final_report: ClusterReport,
    pub model: TuckerModel,
}

/// Nonnegative completion over the full data (no train/test split) with a
/// purity report after every step.
#[allow(clippy::too_many_arguments)]
pub fn run_clustering(
    ranks: &[usize],
    side: &SideInfoSet,
    data: &SparseTensor,
    plan: &GrowthPlan,
    hp: &Hyperparams,
    mode: usize,
    labels: &Labels,
    w: usize,
) -> Result<ClusterRunResult> {
    let mut model = init_model(ranks, side, hp)?;
    let snapshots = emit_snapshots(data, side, plan)?;
    let mut per_step_purity = Vec::with_capacity(snapshots.len());
    for snap in &snapshots {
        optimizer::step(&mut model, side, &snap.delta, hp)?;
        let report = eval::purity(&model, side, mode, labels, w)?;
        per_step_purity.push((snap.step_index, report.average_purity));
    }
    let final_report = eval::purity(&model, side, mode, labels, w)?;
    Ok(ClusterRunResult {
        per_step_purity,
        final_report,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_split;
    use crate::tensor::{IndexIter, Shape, SparseTensor};

    fn dense_data(dims: &[usize]) -> SparseTensor {
        let shape = Shape::new(dims.to_vec()).unwrap();
        let entries = IndexIter::new(&shape)
            .enumerate()
            .map(|(k, index)| (index, 1.0 + (k % 5) as f64))
            .collect();
        SparseTensor::new(shape, entries).unwrap()
    }

    fn small_setup() -> (SparseTensor, SideInfoSet, GrowthPlan, Hyperparams) {
        let dims = [6, 6, 4];
        let data = dense_data(&dims);
        let side = SideInfoSet::identity(&dims);
        let plan = GrowthPlan::multi_aspect(
            crate::tensor::Shape::new(vec![2, 2, 2]).unwrap(),
            vec![2, 2, 1],
            data.shape().clone(),
        )
        .unwrap();
        let hp = Hyperparams {
            lambda_i: vec![1e-3; 3],
            gamma: 1e-2,
            inner_steps: 3,
            ..Hyperparams::default()
        };
        (data, side, plan, hp)
    }

    #[test]
    fn completion_emits_one_record_per_step() {
        let (data, side, plan, hp) = small_setup();
        let split = make_split(&data, 0.2, 1).unwrap();
        let result = run_completion(
            &[2, 2, 2],
            &side,
            &split.train,
            Some(&split.test),
            &plan,
            &hp,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(result.records.len(), plan.plan_steps());
        assert_eq!(result.records[0].step, 0);
        // final snapshot covers the full shape, so the full test set is visible
        assert_eq!(*result.test_sizes.last().unwrap(), split.test.nnz());
        assert!(result.averaged_test_rmse().unwrap().is_finite());
        assert!(result.records.iter().all(|r| r.elapsed_ms.is_some()));
    }

    #[test]
    fn timing_column_can_be_disabled() {
        let (data, side, plan, mut hp) = small_setup();
        hp.gamma = 1e-3;
        let result = run_completion(
            &[2, 2, 2],
            &side,
            &data,
            None,
            &plan,
            &hp,
            &RunOptions {
                record_timing: false,
            },
        )
        .unwrap();
        assert!(result.records.iter().all(|r| r.elapsed_ms.is_none()));
        assert!(result.averaged_test_rmse().is_none());
    }

    #[test]
    fn completion_is_deterministic() {
        let (data, side, plan, hp) = small_setup();
        let split = make_split(&data, 0.2, 1).unwrap();
        let run = || {
            run_completion(
                &[2, 2, 2],
                &side,
                &split.train,
                Some(&split.test),
                &plan,
                &hp,
                &RunOptions::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model.core, b.model.core);
        assert_eq!(a.model.factors, b.model.factors);
        let key = |r: &RunResult| -> Vec<(Option<f64>, Option<f64>, f64)> {
            r.records
                .iter()
                .map(|m| (m.train_rmse, m.test_rmse, m.objective))
                .collect()
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn clustering_reports_per_step_purity() {
        let (data, side, plan, mut hp) = small_setup();
        hp.nonnegative = true;
        let labels: Labels = (0..6)
            .map(|i| (i, vec![if i < 3 { "a" } else { "b" }.to_string()]))
            .collect();
        let result = run_clustering(&[2, 2, 2], &side, &data, &plan, &hp, 0, &labels, 3).unwrap();
        assert_eq!(result.per_step_purity.len(), plan.plan_steps());
        for (_, p) in &result.per_step_purity {
            assert!((0.0..=1.0).contains(p));
        }
        assert_eq!(result.final_report.per_cluster.len(), 2);
    }
}
