//! The CNN-BiLSTM classifier: specification, parameters, build report,
//! forward and backward passes, architecture audit and checkpoints.

mod audit;
mod checkpoint;
mod forward;
mod gradcheck;
mod params;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::batchnorm::batchnorm_param_count;
use crate::nn::conv::conv2d_param_count;
use crate::nn::dense::dense_param_count;
use crate::nn::lstm::bilstm_param_count;
use crate::nn::pool::pooled_extent;
use crate::nn::NnError;
use crate::preprocess::PipelineConfig;
use crate::tensor::{DType, ShapeError, Tensor};

pub use audit::{verify_paper_architecture, ArchitectureAudit, AuditRow};
pub use checkpoint::{load_tensors, save_tensors, CheckpointKind, MAGIC, VERSION};
pub use forward::ForwardCache;
pub use gradcheck::{scaled_gradient_check, ModelGradCheck};
pub use params::{ConvBlock, Params, RunningStats};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid model spec: {0}")]
    Config(String),
    #[error("the literal table graph is an audit only and does not execute past Flatten")]
    NotExecutable,
    #[error("not a model checkpoint: {0}")]
    Format(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Pools time and keypoints as the published table does; shapes and
    /// parameter counts only.
    PaperLiteral,
    /// Pools only the keypoint axis and projects each time step to the
    /// first LSTM's input width.
    #[default]
    TimePreserving,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub mode: ModelMode,
    pub frames: usize,
    pub keypoints: usize,
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub lstm_units: usize,
    pub lstm_proj_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    /// Adds dropout after every pooling layer.
    pub post_conv_dropout: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Compute type for inference. Parameters are always kept in f64.
    pub dtype: DType,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            mode: ModelMode::TimePreserving,
            frames: 30,
            keypoints: 522,
            filters: vec![32, 64, 128, 256],
            kernel: 3,
            lstm_units: 256,
            lstm_proj_dim: 273,
            classes: 20,
            dropout: 0.5,
            post_conv_dropout: false,
            bn_momentum: crate::nn::batchnorm::DEFAULT_MOMENTUM,
            bn_eps: crate::nn::batchnorm::DEFAULT_EPS,
            dtype: DType::F64,
        }
    }
}

/// Input channels per keypoint (x, y, z).
pub const COORDS: usize = 3;

impl ModelSpec {
    pub fn paper_literal() -> Self {
        Self {
            mode: ModelMode::PaperLiteral,
            ..Self::default()
        }
    }

    /// Desk-scale configuration over the 63-point compact layout.
    pub fn scaled(classes: usize) -> Self {
        Self {
            keypoints: 63,
            filters: vec![8, 16],
            lstm_units: 32,
            lstm_proj_dim: 32,
            classes,
            ..Self::default()
        }
    }

    pub fn pool(&self) -> (usize, usize) {
        match self.mode {
            ModelMode::PaperLiteral => (2, 2),
            ModelMode::TimePreserving => (1, 2),
        }
    }

    /// `(T, K, C)` after each conv block's pooling.
    pub fn block_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (ph, pw) = self.pool();
        let (mut t, mut k) = (self.frames, self.keypoints);
        self.filters
            .iter()
            .map(|&c| {
                t = pooled_extent(t, ph);
                k = pooled_extent(k, pw);
                (t, k, c)
            })
            .collect()
    }

    /// Per-time-step feature width entering the projection.
    pub fn conv_features(&self) -> usize {
        self.block_shapes()
            .last()
            .map_or(self.keypoints * COORDS, |&(_, k, c)| k * c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.frames == 0 || self.lstm_units == 0 || self.lstm_proj_dim == 0 {
            return bad("frames, lstm_units and lstm_proj_dim must be positive".into());
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return bad("filters must be a non-empty list of positive counts".into());
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel size must be odd, got {}", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("batch-norm momentum must be in [0, 1) and eps positive".into());
        }
        if self.mode == ModelMode::PaperLiteral && (self.frames != 30 || self.keypoints != 522) {
            return bad("the literal table graph is defined for a (30, 522, 3) input only".into());
        }
        if self.block_shapes().iter().any(|&(t, k, _)| t == 0 || k == 0) {
            return Err(ShapeError::Invalid(format!(
                "{} keypoints over {} frames vanish under {} pooling halvings",
                self.keypoints,
                self.frames,
                self.filters.len()
            ))
            .into());
        }
        Ok(())
    }

    /// Layer table: output shape (without batch axis) and parameter count.
    pub fn build_report(&self) -> Vec<LayerRow> {
        let mut rows = vec![LayerRow::new("Input", vec![self.frames, self.keypoints, COORDS], 0)];
        let (mut t, mut k, mut c_in) = (self.frames, self.keypoints, COORDS);
        for (i, (&c, &(pt, pk, _))) in self.filters.iter().zip(&self.block_shapes()).enumerate() {
            let n = i + 1;
            rows.push(LayerRow::new(
                format!("Conv2D-{n}"),
                vec![t, k, c],
                conv2d_param_count(self.kernel, c_in, c),
            ));
            rows.push(LayerRow::new(
                format!("BatchNorm-{n}"),
                vec![t, k, c],
                batchnorm_param_count(c),
            ));
            rows.push(LayerRow::new(format!("MaxPool2D-{n}"), vec![pt, pk, c], 0));
            if self.post_conv_dropout {
                rows.push(LayerRow::new(format!("Dropout-conv-{n}"), vec![pt, pk, c], 0));
            }
            (t, k, c_in) = (pt, pk, c);
        }
        let u2 = 2 * self.lstm_units;
        match self.mode {
            ModelMode::PaperLiteral => {
                let flat = t * k * c_in;
                rows.push(LayerRow::new("Flatten", vec![flat], 0));
                let target = self.frames * self.lstm_proj_dim;
                let mut reshape = LayerRow::new("Reshape", vec![self.frames, self.lstm_proj_dim], 0);
                if flat != target {
                    reshape.note = Some(format!("UNREALIZABLE: {flat} values cannot fill {target}"));
                }
                rows.push(reshape);
            }
            ModelMode::TimePreserving => {
                rows.push(LayerRow::new("Reshape", vec![t, k * c_in], 0));
                rows.push(LayerRow::new(
                    "Projection",
                    vec![t, self.lstm_proj_dim],
                    dense_param_count(k * c_in, self.lstm_proj_dim),
                ));
            }
        }
        rows.push(LayerRow::new(
            "Bidirectional LSTM-1",
            vec![self.frames, u2],
            bilstm_param_count(self.lstm_proj_dim, self.lstm_units),
        ));
        rows.push(LayerRow::new("Dropout-1", vec![self.frames, u2], 0));
        rows.push(LayerRow::new(
            "Bidirectional LSTM-2",
            vec![u2],
            bilstm_param_count(u2, self.lstm_units),
        ));
        rows.push(LayerRow::new("Dropout-2", vec![u2], 0));
        rows.push(LayerRow::new(
            "Dense",
            vec![self.classes],
            dense_param_count(u2, self.classes),
        ));
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl LayerRow {
    fn new(name: impl Into<String>, output_shape: Vec<usize>, params: usize) -> Self {
        Self {
            name: name.into(),
            output_shape,
            params,
            note: None,
        }
    }
}

/// `(30, 522, 3)` style rendering used by reports.
pub fn format_shape(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(usize::to_string).collect();
    if parts.len() == 1 {
        format!("({})", parts[0])
    } else {
        format!("({})", parts.join(", "))
    }
}

/// A built classifier with its preprocessing configuration and class names.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    pub params: Params,
    pub stats: RunningStats,
    pub class_names: Vec<String>,
    pub pipeline: PipelineConfig,
}

impl Model {
    /// Builds a freshly initialized model. Weights are Glorot-uniform from
    /// a stream derived from `seed`; LSTM forget-gate biases start at 1.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = Params::init(&spec, seed);
        let stats = RunningStats::new(&spec.filters);
        let class_names = (0..spec.classes).map(|c| format!("g{c:02}")).collect();
        Ok(Self {
            spec,
            params,
            stats,
            class_names,
            pipeline: PipelineConfig::default(),
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self, ModelError> {
        if names.len() != self.spec.classes {
            return Err(ModelError::Config(format!(
                "{} class names for {} classes",
                names.len(),
                self.spec.classes
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn with_pipeline(mut self, pipeline: PipelineConfig) -> Self {
        self.pipeline = pipeline;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn report(&self) -> Vec<LayerRow> {
        self.spec.build_report()
    }

    /// Total parameters including batch-norm running statistics.
    pub fn param_count(&self) -> usize {
        self.params.count() + self.stats.count()
    }

    pub fn is_finite(&self) -> bool {
        self.params.named().iter().all(|(_, t)| t.is_finite()) && self.stats.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Class probabilities for a `(N, T, K, 3)` batch in inference mode.
    /// Every row depends only on its own sample.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let logits = match self.spec.dtype {
            DType::F64 => self.logits(batch)?,
            DType::F32 => {
                let p = self.params.cast::<f32>();
                let s = self.stats.cast::<f32>();
                forward::infer_logits(&self.spec, &p, &s, &batch.cast::<f32>())?.cast::<f64>()
            }
        };
        Ok(crate::nn::softmax(&logits)?)
    }

    /// Inference-mode logits in f64.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        forward::infer_logits(&self.spec, &self.params, &self.stats, batch)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>18} {:>12}", "layer", "output", "params")?;
        for row in self.report() {
            writeln!(
                f,
                "{:<24} {:>18} {:>12}",
                row.name,
                format_shape(&row.output_shape),
                row.params
            )?;
        }
        write!(f, "total {}", self.param_count())
    }
}
