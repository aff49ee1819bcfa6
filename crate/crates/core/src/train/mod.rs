//! Training recipe, data splits, evaluation metrics, cross-validation and
//! grid search.

mod cv;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoint::{read_sequence, DatasetManifest, KeypointError};
use crate::model::{Model, ModelError, ModelSpec};
use crate::nn::{softmax_cross_entropy, AdamConfig, AdamState, NnError};
use crate::preprocess::{
    augmented_copies, normalized_sequence, preprocess_pipeline, AugmentSpec, PipelineConfig, PreprocessError,
};
use crate::rng;
use crate::tensor::{ShapeError, Tensor};

pub use cv::{grid_search, kfold_cv, stratified_folds, CvReport, FoldResult, GridPoint, GridResult, GridSpace};
pub use metrics::{argmax, evaluate, f1, predict_labels, ClassMetrics, EvalReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cannot stratify: {0}")]
    Stratify(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Divergence {
        epoch: usize,
        /// Parameters before the update that would have gone non-finite.
        last_finite: Box<TrainOutcome>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        Self::Model(e.into())
    }
}

impl From<ShapeError> for TrainError {
    fn from(e: ShapeError) -> Self {
        Self::Model(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Weight the training loss by `N / (C * n_c)`.
    pub class_weighting: bool,
    /// Record wall-clock time per epoch. Off by default so histories are
    /// byte-identical between runs.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            patience: 12,
            min_delta: 0.0,
            lr0: 1e-3,
            decay_factor: 0.1,
            decay_every: 50,
            seed: 0,
            class_weighting: true,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr0,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config(
                "batch_size, patience and max_epochs must be at least 1".into(),
            ));
        }
        if !(self.min_delta >= 0.0) {
            return Err(TrainError::Config("min_delta must be non-negative".into()));
        }
        self.adam().validate()?;
        Ok(())
    }
}

/// Preprocessed model inputs with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(N, T, K, 3)`.
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Vec<usize>, ids: Vec<String>, class_names: Vec<String>) -> Result<Self, TrainError> {
        x.expect_rank(4)?;
        if x.shape()[0] != labels.len() || labels.len() != ids.len() {
            return Err(TrainError::Config("inputs, labels and ids differ in length".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(TrainError::Label(format!(
                "label index {bad} with {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            x,
            labels,
            ids,
            class_names,
        })
    }

    /// Reads and preprocesses every manifest entry, in manifest order.
    pub fn from_manifest(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<Self, TrainError> {
        let labels = manifest.label_indices()?;
        let items = manifest
            .sequences
            .par_iter()
            .map(|e| -> Result<(Tensor, String), TrainError> {
                let seq = read_sequence(manifest.resolve(e))?;
                let id = seq.source_id.clone();
                Ok((preprocess_pipeline(&seq, cfg)?, id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err(TrainError::Empty("manifest"));
        }
        let (tensors, ids): (Vec<Tensor>, Vec<String>) = items.into_iter().unzip();
        Self::new(Tensor::stack(&tensors)?, labels, ids, manifest.classes.clone())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// Inputs for the given rows, in the given order.
    pub fn batch(&self, rows: &[usize]) -> Tensor {
        let mut shape = self.x.shape().to_vec();
        shape[0] = rows.len();
        let mut data = Vec::with_capacity(rows.len() * self.x.len() / self.len().max(1));
        for &r in rows {
            data.extend_from_slice(self.x.outer(r));
        }
        Tensor::from_vec(&shape, data).expect("rows share a shape")
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.batch(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// The manifest rows plus `copies_per_sequence` augmented variants of each,
/// preprocessed. Used to augment a training split without leaking copies
/// into validation or test data.
pub fn augmented_rows(
    manifest: &DatasetManifest,
    rows: &[usize],
    spec: &AugmentSpec,
    cfg: &PipelineConfig,
) -> Result<Dataset, TrainError> {
    spec.validate()?;
    let labels = manifest.label_indices()?;
    let groups = rows
        .par_iter()
        .map(|&r| -> Result<Vec<(Tensor, usize, String)>, TrainError> {
            let seq = read_sequence(manifest.resolve(&manifest.sequences[r]))?;
            let mut out = vec![(preprocess_pipeline(&seq, cfg)?, labels[r], seq.source_id.clone())];
            if spec.copies_per_sequence > 0 {
                for copy in augmented_copies(&normalized_sequence(&seq, cfg)?, spec)? {
                    out.push((preprocess_pipeline(&copy, cfg)?, labels[r], copy.source_id.clone()));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (mut xs, mut ys, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (x, y, id) in groups.into_iter().flatten() {
        xs.push(x);
        ys.push(y);
        ids.push(id);
    }
    if xs.is_empty() {
        return Err(TrainError::Empty("training rows"));
    }
    Dataset::new(Tensor::stack(&xs)?, ys, ids, manifest.classes.clone())
}

/// Per class, `round_half_up(n_c * train_frac)` samples go to the first
/// part. Both parts are returned in ascending index order.
pub fn stratified_split(
    labels: &[usize],
    classes: usize,
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(TrainError::Config(format!(
            "train fraction {train_frac} outside [0, 1]"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            return Err(TrainError::Stratify(format!(
                "class {c} has {} sample(s), need 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::stream(seed, "split", c as u64));
        let n_train = (idx.len() as f64 * train_frac + 0.5).floor() as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// `w_c = N / (C * n_c)`, so that `sum_c n_c * w_c = N`.
pub fn class_weights(labels: &[usize], classes: usize) -> Result<Vec<f64>, TrainError> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| TrainError::Label(format!("label {l} with {classes} classes")))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(TrainError::Label(format!("class {c} has no samples")));
    }
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&k| n / (classes as f64 * k as f64)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Validation-loss early stopping with patience and minimum improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<(usize, f64)>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: None,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = match self.best {
            None => loss.is_finite(),
            Some((_, best)) => loss < best - self.min_delta,
        };
        if improved {
            self.best = Some((epoch, loss));
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|b| b.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr,wall_ms";

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr, r.wall_ms
            ));
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.get(self.best_epoch)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: History,
}

const EVAL_CHUNK: usize = 64;

/// Unweighted mean cross-entropy and accuracy in inference mode.
pub fn loss_and_accuracy(model: &Model, data: &Dataset) -> Result<(f64, f64), TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty("evaluation set"));
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut correct = 0usize;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let logits = model.logits(&data.batch(chunk))?;
        let labels: Vec<usize> = chunk.iter().map(|&r| data.labels[r]).collect();
        let (loss, _) = softmax_cross_entropy(&logits, &labels, None)?;
        total += loss * chunk.len() as f64;
        let c = logits.shape()[1];
        correct += logits
            .data()
            .chunks(c)
            .zip(&labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok((total / data.len() as f64, correct as f64 / data.len() as f64))
}

fn diverged(epoch: usize, model: Model, records: Vec<EpochRecord>, stopper: &EarlyStopping) -> TrainError {
    TrainError::Divergence {
        epoch,
        last_finite: Box::new(TrainOutcome {
            model,
            history: History {
                best_epoch: stopper.best_epoch().unwrap_or(0),
                records,
                stopped_early: true,
            },
        }),
    }
}

/// Mini-batch Adam with step decay, weighted cross-entropy and early
/// stopping on validation loss. Returns the best-validation-loss model.
pub fn train(model: Model, fit: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if fit.is_empty() {
        return Err(TrainError::Empty("training set"));
    }
    if val.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    let classes = model.spec().classes;
    let weights = if cfg.class_weighting {
        Some(class_weights(&fit.labels, classes)?)
    } else {
        None
    };
    let adam = cfg.adam();
    let mut model = model;
    let mut state = AdamState::new(model.params.named().iter().map(|(_, t)| t.len()));
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = model.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = adam.lr_at(epoch);
        let mut order: Vec<usize> = (0..fit.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        let mut drop_rng = rng::stream(cfg.seed, "dropout", epoch as u64);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for rows in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = rows.iter().map(|&r| fit.labels[r]).collect();
            let (logits, cache) = model.forward_train(&fit.batch(rows), Some(&mut drop_rng))?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels, weights.as_deref())?;
            let grads = model.backward(&cache, &dlogits)?;
            if !loss.is_finite() || !grads.named().iter().all(|(_, t)| t.is_finite()) {
                return Err(diverged(epoch, model, records, &stopper));
            }
            model.update_running(&cache);
            let g: Vec<&[f64]> = grads.named().into_iter().map(|(_, t)| t.data()).collect();
            let mut p: Vec<&mut [f64]> = model.params.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
            state.update(&adam, lr, &mut p, &g)?;
            loss_sum += loss * rows.len() as f64;
            let c = logits.shape()[1];
            correct += logits
                .data()
                .chunks(c)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
        }
        let (val_loss, val_acc) = loss_and_accuracy(&model, val)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, model, records, &stopper));
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / fit.len() as f64,
            train_acc: correct as f64 / fit.len() as f64,
            val_loss,
            val_acc,
            lr,
            wall_ms: if cfg.timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        log::debug!("epoch {epoch}: val_loss {val_loss:.5} val_acc {val_acc:.3}");
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Wait => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        history: History {
            records,
            best_epoch: stopper.best_epoch().unwrap_or(0),
            stopped_early,
        },
    })
}

/// Indices of one holdout experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitIndices {
    pub fit: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Outer 80/20 train/test split, inner 80/20 fit/validation split of the
/// training part for early stopping.
pub fn holdout_split(data: &Dataset, seed: u64) -> Result<SplitIndices, TrainError> {
    let (train, test) = stratified_split(&data.labels, data.classes(), 0.8, seed)?;
    let inner: Vec<usize> = train.iter().map(|&i| data.labels[i]).collect();
    let (fit_pos, val_pos) = stratified_split(&inner, data.classes(), 0.8, rng::derive_seed(seed, "inner", 0))?;
    Ok(SplitIndices {
        fit: fit_pos.iter().map(|&p| train[p]).collect(),
        val: val_pos.iter().map(|&p| train[p]).collect(),
        test,
    })
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub outcome: TrainOutcome,
    pub split: SplitIndices,
    pub report: EvalReport,
}

/// Builds a model from `spec`, trains it on the holdout split and evaluates
/// it on the test part.
pub fn run_holdout(
    data: &Dataset,
    spec: &ModelSpec,
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
) -> Result<Experiment, TrainError> {
    let split = holdout_split(data, cfg.seed)?;
    let model = Model::build(spec.clone(), cfg.seed)?
        .with_class_names(data.class_names.clone())?
        .with_pipeline(pipeline.clone());
    let outcome = train(model, &data.subset(&split.fit), &data.subset(&split.val), cfg)?;
    let report = evaluate(&outcome.model, &data.subset(&split.test))?;
    Ok(Experiment { outcome, split, report })
}
