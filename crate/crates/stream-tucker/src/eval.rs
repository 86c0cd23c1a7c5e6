//! Metrics: RMSE, cluster purity and CSV emission.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{predict_with_projected, projected_factors, SideInfoSet, TuckerModel};
use crate::tensor::SparseTensor;

/// Per-step run metrics. RMSE fields are absent when the corresponding
/// entry set is empty at that step; elapsed is absent when timing is off.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub train_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub objective: f64,
    pub elapsed_ms: Option<u64>,
}

/// Purity report for the clusters along one mode.
#[derive(Debug, Clone)]
pub struct ClusterReport {
    pub mode: usize,
    pub w: usize,
    /// Per column: (column index, top-w item ids, purity).
    pub per_cluster: Vec<(usize, Vec<usize>, f64)>,
    pub average_purity: f64,
}

/// Multi-label item-to-category map.
pub type Labels = BTreeMap<usize, Vec<String>>;

/// Root mean square error of the model over the given entries.
pub fn rmse(model: &TuckerModel, side: &SideInfoSet, entries: &SparseTensor) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::EmptyEntrySet("rmse over empty entry set".into()));
    }
    let projected = projected_factors(model, side, entries.shape().dims())?;
    let mut sum = 0.0;
    for (index, x) in entries.iter() {
        let r = x - predict_with_projected(&model.core, &projected, index);
        sum += r * r;
    }
    Ok((sum / entries.nnz() as f64).sqrt())
}

/// Unweighted mean of per-step test RMSE over steps with a non-empty test
/// set; `weighted` averages by test-set size instead (sizes parallel to
/// `records`).
pub fn average_test_rmse(records: &[MetricsRecord], sizes: Option<&[usize]>) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, r) in records.iter().enumerate() {
        if let Some(v) = r.test_rmse {
            let w = sizes.map_or(1.0, |s| s[i] as f64);
            num += w * v;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Cluster purity along one mode: each column of `A_mode * U_mode` is read
/// as a distribution over items, the top-`w` items form a cluster, and
/// purity is the share of the cluster carrying its most common category.
/// Ties in the top-w selection break toward the lower row index.
pub fn purity(
    model: &TuckerModel,
    side: &SideInfoSet,
    mode: usize,
    labels: &Labels,
    w: usize,
) -> Result<ClusterReport> {
    if mode >= model.order() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: model.order(),
        });
    }
    if w == 0 {
        return Err(Error::InvalidParam("w must be >= 1".into()));
    }
    let rows = side.mode(mode).rows();
    if w > rows {
        return Err(Error::InvalidParam(format!(
            "w = {w} exceeds mode size {rows}"
        )));
    }
    let p = side.mode(mode).project(&model.factors[mode], rows)?;

    let mut per_cluster = Vec::with_capacity(p.cols());
    let mut total = 0.0;
    for col in 0..p.cols() {
        let mut scored: Vec<(usize, f64)> = (0..rows).map(|r| (r, p.get(r, col))).collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let top: Vec<usize> = scored[..w].iter().map(|&(r, _)| r).collect();

        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &item in &top {
            if let Some(cats) = labels.get(&item) {
                for c in cats {
                    *counts.entry(c.as_str()).or_insert(0) += 1;
                }
            }
        }
        let w_p = counts.values().copied().max().unwrap_or(0);
        let purity = w_p as f64 / w as f64;
        total += purity;
        per_cluster.push((col, top, purity));
    }
    Ok(ClusterReport {
        mode,
        w,
        average_purity: total / p.cols() as f64,
        per_cluster,
    })
}

/// Parses a labels file of `item_id,category` lines (multiple lines per
/// item allowed).
pub fn load_labels(path: &Path) -> Result<Labels> {
    let text = fs::read_to_string(path)?;
    let mut labels = Labels::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, cat) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, lineno + 1, "expected 'item_id,category'"))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|e| Error::parse(path, lineno + 1, format!("bad item id: {e}")))?;
        labels.entry(id).or_default().push(cat.trim().to_string());
    }
    Ok(labels)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

/// Writes metrics as CSV: 6 decimal places for metrics, integer
/// milliseconds, empty fields for absent values.
pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut out = String::from("step,train_rmse,test_rmse,objective,elapsed_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            r.step,
            fmt_opt(r.train_rmse),
            fmt_opt(r.test_rmse),
            r.objective,
            r.elapsed_ms.map_or(String::new(), |ms| ms.to_string()),
        ));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Hyperparams, SideInfo};
    use crate::tensor::{DenseMatrix, DenseTensor, Shape};

    fn labels_from(pairs: &[(usize, &str)]) -> Labels {
        let mut l = Labels::new();
        for &(id, cat) in pairs {
            l.entry(id).or_default().push(cat.to_string());
        }
        l
    }

    #[test]
    fn rmse_perfect_is_zero() {
        let side = SideInfoSet::identity(&[2, 2]);
        let hp = Hyperparams {
            lambda_i: vec![0.0, 0.0],
            ..Hyperparams::default()
        };
        let model = init_model(&[2, 2], &side, &hp).unwrap();
        let projected = crate::model::projected_factors(&model, &side, &[2, 2]).unwrap();
        let entries: Vec<_> = (0..2)
            .map(|i| {
                let v = predict_with_projected(&model.core, &projected, &[i, i]);
                (vec![i, i], v)
            })
            .collect();
        let t = SparseTensor::new(Shape::new(vec![2, 2]).unwrap(), entries).unwrap();
        assert!(rmse(&model, &side, &t).unwrap() < 1e-12);
    }

    #[test]
    fn rmse_hand_computed() {
        // truths (1, 4) vs predictions (1, 2) -> sqrt(2)
        let side = SideInfoSet::identity(&[2, 2]);
        let core = DenseTensor::new(Shape::new(vec![1, 1]).unwrap(), vec![1.0]).unwrap();
        let factors = vec![
            DenseMatrix::new(2, 1, vec![1.0, 2.0]).unwrap(),
            DenseMatrix::new(2, 1, vec![1.0, 1.0]).unwrap(),
        ];
        let model = TuckerModel::new(core, factors).unwrap();
        let t = SparseTensor::new(
            Shape::new(vec![2, 2]).unwrap(),
            vec![(vec![0, 0], 1.0), (vec![1, 0], 4.0)],
        )
        .unwrap();
        let v = rmse(&model, &side, &t).unwrap();
        assert!((v - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rmse_empty_errors() {
        let side = SideInfoSet::identity(&[2, 2]);
        let hp = Hyperparams {
            lambda_i: vec![0.0, 0.0],
            ..Hyperparams::default()
        };
        let model = init_model(&[1, 1], &side, &hp).unwrap();
        let t = SparseTensor::empty(Shape::new(vec![2, 2]).unwrap());
        assert!(matches!(
            rmse(&model, &side, &t),
            Err(Error::EmptyEntrySet(_))
        ));
    }

    fn planted_model(p: DenseMatrix) -> (TuckerModel, SideInfoSet) {
        let rows = p.rows();
        let cols = p.cols();
        let side = SideInfoSet::new(vec![SideInfo::Identity(rows), SideInfo::Identity(2)]).unwrap();
        let core_shape = Shape::new(vec![cols, 1]).unwrap();
        let core = DenseTensor::new(core_shape, vec![1.0; cols]).unwrap();
        let other = DenseMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        (TuckerModel::new(core, vec![p, other]).unwrap(), side)
    }

    #[test]
    fn purity_definitional() {
        // one column whose top-5 items carry labels {A,A,A,B,C} -> 0.6
        let mut values = vec![0.0; 6];
        for (i, v) in [9.0, 8.0, 7.0, 6.0, 5.0, 1.0].iter().enumerate() {
            values[i] = *v;
        }
        let p = DenseMatrix::new(6, 1, values).unwrap();
        let (model, side) = planted_model(p);
        let labels = labels_from(&[(0, "A"), (1, "A"), (2, "A"), (3, "B"), (4, "C"), (5, "B")]);
        let report = purity(&model, &side, 0, &labels, 5).unwrap();
        assert!((report.per_cluster[0].2 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn purity_average_is_mean() {
        let report = ClusterReport {
            mode: 0,
            w: 5,
            per_cluster: vec![(0, vec![], 0.6), (1, vec![], 1.0)],
            average_purity: 0.8,
        };
        let mean =
            report.per_cluster.iter().map(|c| c.2).sum::<f64>() / report.per_cluster.len() as f64;
        assert!((mean - report.average_purity).abs() < 1e-12);
    }

    #[test]
    fn purity_multilabel_counts_most_common() {
        // top-3 label sets {(A,B), (A), (C)} -> most common A, purity 2/3
        let p = DenseMatrix::new(3, 1, vec![3.0, 2.0, 1.0]).unwrap();
        let (model, side) = planted_model(p);
        let mut labels = labels_from(&[(0, "A"), (1, "A"), (2, "C")]);
        labels.get_mut(&0).unwrap().push("B".to_string());
        let report = purity(&model, &side, 0, &labels, 3).unwrap();
        assert!((report.per_cluster[0].2 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn purity_scale_invariant() {
        let p = DenseMatrix::new(4, 1, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let labels = labels_from(&[(0, "A"), (1, "A"), (2, "B"), (3, "B")]);
        let (model, side) = planted_model(p.clone());
        let r1 = purity(&model, &side, 0, &labels, 2).unwrap();
        let mut scaled = p;
        for v in scaled.values_mut() {
            *v *= 1000.0;
        }
        let (model2, side2) = planted_model(scaled);
        let r2 = purity(&model2, &side2, 0, &labels, 2).unwrap();
        assert_eq!(r1.per_cluster[0].1, r2.per_cluster[0].1);
        assert_eq!(r1.per_cluster[0].2, r2.per_cluster[0].2);
    }

    #[test]
    fn purity_w_too_large() {
        let p = DenseMatrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let (model, side) = planted_model(p);
        assert!(purity(&model, &side, 0, &Labels::new(), 4).is_err());
    }

    #[test]
    fn csv_output_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&[], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,train_rmse,test_rmse,objective,elapsed_ms\n");

        let rec = MetricsRecord {
            step: 3,
            train_rmse: Some(1.25),
            test_rmse: None,
            objective: 0.5,
            elapsed_ms: Some(12),
        };
        emit_csv(&[rec], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "3,1.250000,,0.500000,12");
    }

    #[test]
    fn average_rmse_unweighted_skips_empty() {
        let mk = |step, v: Option<f64>| MetricsRecord {
            step,
            train_rmse: None,
            test_rmse: v,
            objective: 0.0,
            elapsed_ms: None,
        };
        let records = vec![mk(0, Some(1.0)), mk(1, None), mk(2, Some(2.0))];
        assert_eq!(average_test_rmse(&records, None), Some(1.5));
        let sizes = vec![1usize, 0, 3];
        assert_eq!(average_test_rmse(&records, Some(&sizes)), Some(1.75));
    }
}
