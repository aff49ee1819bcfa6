//! Landmark data model: layouts, frames, sequences and their file formats.

mod io;
mod layout;
mod manifest;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    format_frame_record, parse_frame_record, parse_sequence_str, read_sequence, sequence_to_string, write_sequence,
    FileHeader,
};
pub use layout::{Block, BlockKind, LayoutSpec, Projection, BODY_LANDMARKS, FACE_LANDMARKS, HAND_LANDMARKS};
pub use manifest::{validate_manifest, DatasetManifest, ManifestEntry};

pub type Point3 = [f64; 3];

/// Sentinel for a landmark the tracker lost in this frame.
pub const MISSING: Point3 = [f64::NAN, f64::NAN, f64::NAN];

pub fn is_missing(p: &Point3) -> bool {
    p.iter().all(|v| v.is_nan())
}

#[derive(Debug, Error)]
pub enum KeypointError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("frame order error: t={t} follows t={prev}")]
    Order { prev: i64, t: i64 },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unknown label {0:?}")]
    Label(String),
    #[error("duplicate path {0:?}")]
    Duplicate(String),
    #[error("manifest needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether coordinates are still tracker output or already normalized
/// against the reference shoulder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateSpace {
    #[default]
    Raw,
    Normalized,
}

#[derive(Clone, Debug)]
pub struct KeypointFrame {
    t: i64,
    landmarks: Vec<Point3>,
    layout: Arc<LayoutSpec>,
}

impl KeypointFrame {
    /// Validates landmark count against the layout. Coordinates must be
    /// finite except for whole-landmark [`MISSING`] sentinels.
    pub fn new(t: i64, landmarks: Vec<Point3>, layout: Arc<LayoutSpec>) -> Result<Self, KeypointError> {
        if landmarks.len() != layout.k() {
            return Err(KeypointError::Layout(format!(
                "frame t={t} has {} landmarks, layout {} needs {}",
                landmarks.len(),
                layout.name(),
                layout.k()
            )));
        }
        for (i, p) in landmarks.iter().enumerate() {
            if !is_missing(p) && p.iter().any(|v| !v.is_finite()) {
                return Err(KeypointError::Value(format!(
                    "frame t={t} landmark {i} has non-finite coordinate {p:?}"
                )));
            }
        }
        Ok(Self { t, landmarks, layout })
    }

    pub fn t(&self) -> i64 {
        self.t
    }

    pub fn landmarks(&self) -> &[Point3] {
        &self.landmarks
    }

    pub fn layout(&self) -> &Arc<LayoutSpec> {
        &self.layout
    }

    pub fn has_missing(&self) -> bool {
        self.landmarks.iter().any(is_missing)
    }

    pub fn into_landmarks(self) -> Vec<Point3> {
        self.landmarks
    }

    /// Rebuilds with new coordinates, keeping `t` and layout. Used by
    /// transforms that already guarantee the count.
    pub(crate) fn with_landmarks(&self, landmarks: Vec<Point3>) -> Self {
        debug_assert_eq!(landmarks.len(), self.layout.k());
        Self {
            t: self.t,
            landmarks,
            layout: self.layout.clone(),
        }
    }

    pub fn project(&self, projection: &Projection) -> Result<Self, KeypointError> {
        if projection.source().name() != self.layout.name() {
            return Err(KeypointError::Layout(format!(
                "projection expects {}, frame is {}",
                projection.source().name(),
                self.layout.name()
            )));
        }
        Ok(Self {
            t: self.t,
            landmarks: projection.indices().iter().map(|&i| self.landmarks[i]).collect(),
            layout: projection.target().clone(),
        })
    }
}

impl PartialEq for KeypointFrame {
    /// Bitwise on coordinates so NaN sentinels compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.layout.name() == other.layout.name()
            && self.landmarks.len() == other.landmarks.len()
            && self
                .landmarks
                .iter()
                .zip(&other.landmarks)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GestureSequence {
    frames: Vec<KeypointFrame>,
    pub label: Option<String>,
    pub source_id: String,
    pub fps: u32,
    pub space: CoordinateSpace,
}

impl GestureSequence {
    pub fn new(frames: Vec<KeypointFrame>, source_id: impl Into<String>) -> Result<Self, KeypointError> {
        let source_id = source_id.into();
        let Some(first) = frames.first() else {
            return Err(KeypointError::Empty(format!("sequence {source_id} has no frames")));
        };
        let layout = first.layout().name().to_string();
        for pair in frames.windows(2) {
            if pair[1].layout().name() != layout {
                return Err(KeypointError::Layout(format!(
                    "mixed layouts {} and {} in {source_id}",
                    layout,
                    pair[1].layout().name()
                )));
            }
            if pair[1].t() <= pair[0].t() {
                return Err(KeypointError::Order {
                    prev: pair[0].t(),
                    t: pair[1].t(),
                });
            }
        }
        Ok(Self {
            frames,
            label: None,
            source_id,
            fps: 30,
            space: CoordinateSpace::Raw,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn frames(&self) -> &[KeypointFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn layout(&self) -> &Arc<LayoutSpec> {
        self.frames[0].layout()
    }

    /// Same metadata, new frames. Frames must keep the sequence invariants.
    pub fn with_frames(&self, frames: Vec<KeypointFrame>) -> Result<Self, KeypointError> {
        let mut out = Self::new(frames, self.source_id.clone())?;
        out.label = self.label.clone();
        out.fps = self.fps;
        out.space = self.space;
        Ok(out)
    }

    pub fn into_frames(self) -> Vec<KeypointFrame> {
        self.frames
    }
}
