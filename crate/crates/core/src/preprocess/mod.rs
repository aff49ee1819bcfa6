//! Frame conditioning: imputation, normalization, Kalman smoothing,
//! fixed-length resampling and augmentation.

mod augment;
mod kalman;
mod normalize;
mod resample;

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{apply_augment, augment_sequence, augmented_copies, rotate_y, AugmentDraw, AugmentSpec};
pub use kalman::{kalman_smooth, KalmanBank, KalmanSpec};
pub use normalize::{normalize_frame, Anchors, Imputer, NormalizationSpec};
pub use resample::{resample_sequence, DEFAULT_FRAMES};

use crate::keypoint::{
    read_sequence, write_sequence, CoordinateSpace, DatasetManifest, GestureSequence, KeypointError, KeypointFrame,
    LayoutSpec, ManifestEntry, Point3, Projection,
};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty sequence")]
    Empty,
    #[error("sequence of {len} frame(s) is too short to resample")]
    TooShort { len: usize },
    #[error("frame t={t}: shoulder distance {d_norm} below epsilon")]
    DegenerateFrame { t: i64, d_norm: f64 },
    #[error("frame t={t}: missing landmarks must be imputed first")]
    ImputationRequired { t: i64 },
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PreprocessError>,
    },
}

impl PreprocessError {
    /// The underlying error with any stage tag removed.
    pub fn root(&self) -> &PreprocessError {
        match self {
            PreprocessError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PreprocessError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Project,
    Impute,
    Normalize,
    Kalman,
    Resample,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Project => "project",
            Stage::Impute => "impute",
            Stage::Normalize => "normalize",
            Stage::Kalman => "kalman",
            Stage::Resample => "resample",
        })
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, PreprocessError>;
}

impl<T, E: Into<PreprocessError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PreprocessError> {
        self.map_err(|e| PreprocessError::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Model-input layout. `None` keeps the source layout.
    pub layout: Option<String>,
    pub frames: usize,
    pub normalization: NormalizationSpec,
    pub kalman: KalmanSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            layout: None,
            frames: DEFAULT_FRAMES,
            normalization: NormalizationSpec::default(),
            kalman: KalmanSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn target_layout(&self, source: &Arc<LayoutSpec>) -> Result<Arc<LayoutSpec>, PreprocessError> {
        match &self.layout {
            Some(name) => Ok(LayoutSpec::by_name(name)?),
            None => Ok(source.clone()),
        }
    }
}

/// Per-frame front half of the pipeline: project to the model layout,
/// impute dropouts, normalize, Kalman filter. State carries across frames,
/// so feeding a stream frame by frame gives the same numbers as
/// conditioning the whole recording at once.
#[derive(Clone, Debug)]
pub struct FrameConditioner {
    projection: Projection,
    anchors: Anchors,
    epsilon: f64,
    imputer: Imputer,
    kalman: KalmanBank,
    space: CoordinateSpace,
    scratch: Vec<f64>,
}

impl FrameConditioner {
    pub fn new(source: Arc<LayoutSpec>, space: CoordinateSpace, cfg: &PipelineConfig) -> Result<Self, PreprocessError> {
        let target = cfg.target_layout(&source).stage(Stage::Project)?;
        let projection = Projection::new(source, target.clone()).stage(Stage::Project)?;
        let anchors = cfg.normalization.anchors(&target).stage(Stage::Normalize)?;
        let k = target.k();
        Ok(Self {
            projection,
            anchors,
            epsilon: cfg.normalization.epsilon_dnorm,
            imputer: Imputer::new(k, anchors),
            kalman: KalmanBank::new(cfg.kalman.clone(), k * 3).stage(Stage::Kalman)?,
            space,
            scratch: vec![0.0; k * 3],
        })
    }

    pub fn target(&self) -> &Arc<LayoutSpec> {
        self.projection.target()
    }

    fn normalized(&mut self, frame: &KeypointFrame) -> Result<Vec<Point3>, PreprocessError> {
        let projected = frame.project(&self.projection).stage(Stage::Project)?;
        let filled = self
            .imputer
            .push(frame.t(), projected.landmarks())
            .stage(Stage::Impute)?;
        match self.space {
            CoordinateSpace::Raw => {
                normalize::normalize_points(frame.t(), &filled, self.anchors, self.epsilon).stage(Stage::Normalize)
            }
            CoordinateSpace::Normalized => Ok(filled),
        }
    }

    /// Conditions one frame and returns the smoothed landmarks.
    pub fn push(&mut self, frame: &KeypointFrame) -> Result<Vec<Point3>, PreprocessError> {
        let points = self.normalized(frame)?;
        for (dst, p) in self.scratch.chunks_exact_mut(3).zip(&points) {
            dst.copy_from_slice(p);
        }
        let out = self.kalman.step(&self.scratch);
        Ok(out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

/// Stacks `T` frames of `K` landmarks into a `(T, K, 3)` tensor.
pub fn frames_to_tensor(frames: &[Vec<Point3>]) -> Tensor<f64> {
    let k = frames.first().map_or(0, Vec::len);
    let data = frames
        .iter()
        .flat_map(|f| f.iter().flat_map(|p| p.iter().copied()))
        .collect();
    Tensor::from_vec(&[frames.len(), k, 3], data).expect("rectangular frames")
}

/// Resamples conditioned frames to `frames` rows.
pub fn resample_points(points: &[Vec<Point3>], frames: usize) -> Result<Vec<Vec<Point3>>, PreprocessError> {
    if frames < 2 {
        return Err(PreprocessError::Config(format!(
            "resample target must be >= 2, got {frames}"
        )))
        .stage(Stage::Resample);
    }
    if points.len() < 2 {
        return Err(PreprocessError::TooShort { len: points.len() }).stage(Stage::Resample);
    }
    if points.len() == frames {
        return Ok(points.to_vec());
    }
    Ok(resample::interpolate_points(points, frames))
}

/// Full offline path: impute, normalize per frame, Kalman smooth, resample.
/// Returns a `(T, K, 3)` tensor in the model-input layout.
pub fn preprocess_pipeline(seq: &GestureSequence, cfg: &PipelineConfig) -> Result<Tensor<f64>, PreprocessError> {
    let mut cond = FrameConditioner::new(seq.layout().clone(), seq.space, cfg)?;
    let conditioned = seq
        .frames()
        .iter()
        .map(|f| cond.push(f))
        .collect::<Result<Vec<_>, _>>()?;
    let resampled = resample_points(&conditioned, cfg.frames)?;
    Ok(frames_to_tensor(&resampled))
}

/// Projects, imputes and normalizes every frame (no smoothing). The result
/// is marked as normalized space so the pipeline will not normalize again.
pub fn normalized_sequence(seq: &GestureSequence, cfg: &PipelineConfig) -> Result<GestureSequence, PreprocessError> {
    let mut cond = FrameConditioner::new(seq.layout().clone(), seq.space, cfg)?;
    let target = cond.target().clone();
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let points = cond.normalized(f)?;
            KeypointFrame::new(f.t(), points, target.clone()).stage(Stage::Normalize)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = seq.with_frames(frames)?;
    out.space = CoordinateSpace::Normalized;
    Ok(out)
}

/// Writes the original sequences plus `copies_per_sequence` augmented
/// variants of each into `out_dir` and returns the expanded manifest.
/// Augmented files are stored in normalized space.
pub fn expand_dataset(
    manifest: &DatasetManifest,
    spec: &AugmentSpec,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, PreprocessError> {
    spec.validate()?;
    crate::keypoint::validate_manifest(manifest)?;
    fs::create_dir_all(out_dir).map_err(KeypointError::from)?;
    let per_entry = manifest
        .sequences
        .par_iter()
        .map(|entry| -> Result<Vec<ManifestEntry>, PreprocessError> {
            let src = manifest.resolve(entry);
            let seq = read_sequence(&src)?;
            let name = src
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| entry.path.clone());
            let dst = out_dir.join(&name);
            if dst != src {
                write_sequence(&seq, &dst)?;
            }
            let mut entries = vec![ManifestEntry {
                path: name,
                label: entry.label.clone(),
            }];
            if spec.copies_per_sequence > 0 {
                let normalized = normalized_sequence(&seq, cfg)?;
                for copy in augmented_copies(&normalized, spec)? {
                    let file = format!("{}.kpjl", copy.source_id);
                    write_sequence(&copy, out_dir.join(&file))?;
                    entries.push(ManifestEntry {
                        path: file,
                        label: entry.label.clone(),
                    });
                }
            }
            Ok(entries)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = DatasetManifest::new(
        manifest.classes.clone(),
        manifest.seed,
        per_entry.into_iter().flatten().collect(),
    );
    out.base_dir = out_dir.to_path_buf();
    Ok(out)
}
