use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, stratified_split, train, Dataset, EvalReport, TrainConfig, TrainError};
use crate::model::{Model, ModelSpec};
use crate::preprocess::PipelineConfig;
use crate::rng;

/// Assigns every sample to one of `k` folds. Each class is shuffled, then
/// dealt round-robin, continuing where the previous class stopped so fold
/// sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], classes: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < k {
            return Err(TrainError::Stratify(format!(
                "class {c} has {} sample(s), need {k}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::stream(seed, "folds", c as u64));
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub macro_f1_mean: f64,
    /// Population standard deviation over folds.
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Stratified k-fold cross-validation. Each held-out fold serves both as
/// the early-stopping monitor and as the evaluation set for that fold.
pub fn kfold_cv(
    data: &Dataset,
    k: usize,
    spec: &ModelSpec,
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
) -> Result<CvReport, TrainError> {
    let folds = stratified_folds(&data.labels, data.classes(), k, cfg.seed)?;
    let results = (0..k)
        .into_par_iter()
        .map(|f| -> Result<FoldResult, TrainError> {
            let held = &folds[f];
            let rest: Vec<usize> = {
                let mut r: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(g, _)| g != f)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                r.sort_unstable();
                r
            };
            let seed = rng::derive_seed(cfg.seed, "fold", f as u64);
            let fold_cfg = TrainConfig { seed, ..cfg.clone() };
            let model = Model::build(spec.clone(), seed)?
                .with_class_names(data.class_names.clone())?
                .with_pipeline(pipeline.clone());
            let val = data.subset(held);
            let out = train(model, &data.subset(&rest), &val, &fold_cfg)?;
            Ok(FoldResult {
                fold: f,
                train_size: rest.len(),
                val_size: held.len(),
                epochs: out.history.records.len(),
                best_epoch: out.history.best_epoch,
                report: evaluate(&out.model, &val)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let f1s: Vec<f64> = results.iter().map(|r| r.report.macro_f1).collect();
    let accs: Vec<f64> = results.iter().map(|r| r.report.accuracy).collect();
    let (macro_f1_mean, macro_f1_std) = mean_std(&f1s);
    let (accuracy_mean, accuracy_std) = mean_std(&accs);
    Ok(CvReport {
        k,
        folds: results,
        macro_f1_mean,
        macro_f1_std,
        accuracy_mean,
        accuracy_std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub lr0: Vec<f64>,
    pub kernel: Vec<usize>,
    pub units: Vec<usize>,
}

impl GridSpace {
    /// Cartesian product in `lr0`, `kernel`, `units` nesting order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lr0 in &self.lr0 {
            for &kernel in &self.kernel {
                for &units in &self.units {
                    out.push(GridPoint { lr0, kernel, units });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr0: f64,
    pub kernel: usize,
    pub units: usize,
}

impl GridPoint {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.lr0
            .total_cmp(&other.lr0)
            .then(self.kernel.cmp(&other.kernel))
            .then(self.units.cmp(&other.units))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridResult {
    /// 1-based.
    pub rank: usize,
    pub point: GridPoint,
    pub val_macro_f1: f64,
    pub val_loss: f64,
    pub epochs: usize,
}

/// Trains every combination on one stratified 80/20 split and ranks them by
/// validation macro-F1 (descending), then validation loss (ascending), then
/// the point itself.
pub fn grid_search(
    data: &Dataset,
    space: &GridSpace,
    spec: &ModelSpec,
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
) -> Result<Vec<GridResult>, TrainError> {
    let points = space.points();
    if points.is_empty() {
        return Err(TrainError::Config("grid search space is empty".into()));
    }
    let (fit_idx, val_idx) = stratified_split(&data.labels, data.classes(), 0.8, cfg.seed)?;
    let (fit, val) = (data.subset(&fit_idx), data.subset(&val_idx));
    let mut results = points
        .par_iter()
        .enumerate()
        .map(|(id, p)| -> Result<GridResult, TrainError> {
            let seed = rng::derive_seed(cfg.seed, "grid", id as u64);
            let spec = ModelSpec {
                kernel: p.kernel,
                lstm_units: p.units,
                ..spec.clone()
            };
            let run_cfg = TrainConfig {
                lr0: p.lr0,
                seed,
                ..cfg.clone()
            };
            let model = Model::build(spec, seed)?
                .with_class_names(data.class_names.clone())?
                .with_pipeline(pipeline.clone());
            let out = train(model, &fit, &val, &run_cfg)?;
            let val_loss = out.history.best().map_or(f64::INFINITY, |r| r.val_loss);
            Ok(GridResult {
                rank: 0,
                point: *p,
                val_macro_f1: evaluate(&out.model, &val)?.macro_f1,
                val_loss,
                epochs: out.history.records.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by(|a, b| {
        b.val_macro_f1
            .total_cmp(&a.val_macro_f1)
            .then(a.val_loss.total_cmp(&b.val_loss))
            .then(a.point.cmp_key(&b.point))
    });
    for (i, r) in results.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_samples_five_folds() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let folds = stratified_folds(&labels, 4, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for f in &folds {
            for c in 0..4 {
                assert_eq!(f.iter().filter(|&&i| labels[i] == c).count(), 5);
            }
        }
    }

    #[test]
    fn k_must_be_at_least_two() {
        assert!(matches!(stratified_folds(&[0, 1], 2, 1, 0), Err(TrainError::Config(_))));
        assert!(matches!(
            stratified_folds(&[0, 0, 1], 2, 2, 0),
            Err(TrainError::Stratify(_))
        ));
    }

    #[test]
    fn grid_points_are_cartesian() {
        let s = GridSpace {
            lr0: vec![1e-3, 3e-3],
            kernel: vec![3, 5],
            units: vec![16],
        };
        assert_eq!(s.points().len(), 4);
        assert_eq!(
            s.points()[1],
            GridPoint {
                lr0: 1e-3,
                kernel: 5,
                units: 16
            }
        );
    }

    #[test]
    fn std_is_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
