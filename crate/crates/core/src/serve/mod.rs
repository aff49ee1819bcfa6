//! Sliding-window streaming inference. Transport-agnostic: a [`Session`]
//! consumes frames, a [`Connection`] speaks the JSON protocol on top of it.

mod protocol;

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoint::{GestureSequence, KeypointError, KeypointFrame, LayoutSpec, Point3};
use crate::model::{Model, ModelError};
use crate::preprocess::{
    frames_to_tensor, kalman_smooth, normalized_sequence, resample_points, resample_sequence, FrameConditioner,
    PreprocessError,
};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::argmax;

pub use protocol::{ClientMsg, Close, CloseCode, Connection, ServerMsg};

pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_STRIDE: usize = 5;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("bad value: {0}")]
    Value(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<KeypointError> for ServeError {
    fn from(e: KeypointError) -> Self {
        match e {
            KeypointError::Layout(m) => Self::Layout(m),
            other => Self::Value(other.to_string()),
        }
    }
}

impl From<crate::tensor::ShapeError> for ServeError {
    fn from(e: crate::tensor::ShapeError) -> Self {
        Self::Model(e.into())
    }
}

impl ServeError {
    pub fn close_code(&self) -> CloseCode {
        match self {
            Self::Layout(_) => CloseCode::Layout,
            _ => CloseCode::BadValue,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Raw frames per prediction window.
    pub window: usize,
    /// Frames between consecutive predictions.
    pub stride: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ServeError> {
        if self.window < 2 || self.stride == 0 {
            return Err(ServeError::Config(format!(
                "window must be >= 2 and stride >= 1, got {} and {}",
                self.window, self.stride
            )));
        }
        Ok(())
    }

    /// Whether a prediction is due after `seen` frames.
    pub fn emits_after(&self, seen: u64) -> bool {
        let w = self.window as u64;
        seen >= w && (seen - w).is_multiple_of(self.stride as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Timestamp of the newest frame in the window.
    pub window_end: i64,
    pub label: String,
    pub class_index: usize,
    pub probs: Vec<f64>,
    pub latency_ms: f64,
}

/// Per-connection state. Frames are conditioned on arrival, so the Kalman
/// filter runs once over the whole stream and only the last `window`
/// conditioned frames are retained.
#[derive(Debug)]
pub struct Session {
    model: Arc<Model>,
    layout: Arc<LayoutSpec>,
    cfg: SessionConfig,
    conditioner: FrameConditioner,
    buffer: VecDeque<(i64, Vec<Point3>)>,
    frames_seen: u64,
    last_t: Option<i64>,
}

impl Session {
    pub fn new(model: Arc<Model>, layout: Arc<LayoutSpec>, cfg: SessionConfig) -> Result<Self, ServeError> {
        cfg.validate()?;
        let conditioner = FrameConditioner::new(layout.clone(), Default::default(), &model.pipeline)
            .map_err(|e| ServeError::Layout(e.to_string()))?;
        let k = conditioner.target().k();
        if k != model.spec().keypoints {
            return Err(ServeError::Layout(format!(
                "layout {} conditions to {k} landmarks, model expects {}",
                layout.name(),
                model.spec().keypoints
            )));
        }
        Ok(Self {
            model,
            layout,
            cfg,
            buffer: VecDeque::with_capacity(cfg.window),
            conditioner,
            frames_seen: 0,
            last_t: None,
        })
    }

    pub fn layout(&self) -> &Arc<LayoutSpec> {
        &self.layout
    }

    pub fn config(&self) -> SessionConfig {
        self.cfg
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn handle_frame(&mut self, frame: &KeypointFrame) -> Result<Option<Prediction>, ServeError> {
        let started = Instant::now();
        if frame.layout().name() != self.layout.name() {
            return Err(ServeError::Layout(format!(
                "frame in layout {}, session uses {}",
                frame.layout().name(),
                self.layout.name()
            )));
        }
        if let Some(prev) = self.last_t {
            if frame.t() <= prev {
                return Err(ServeError::Value(format!("t={} does not follow t={prev}", frame.t())));
            }
        }
        let points = self.conditioner.push(frame)?;
        self.last_t = Some(frame.t());
        if self.buffer.len() == self.cfg.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back((frame.t(), points));
        self.frames_seen += 1;
        if !self.cfg.emits_after(self.frames_seen) {
            return Ok(None);
        }
        let window: Vec<Vec<Point3>> = self.buffer.iter().map(|(_, p)| p.clone()).collect();
        let x = frames_to_tensor(&resample_points(&window, self.model.spec().frames)?);
        let shape = x.shape().to_vec();
        let probs = self
            .model
            .predict(&x.reshape(&[1, shape[0], shape[1], shape[2]])?)?
            .into_data();
        let class_index = argmax(&probs);
        Ok(Some(Prediction {
            window_end: frame.t(),
            label: self.model.class_names[class_index].clone(),
            class_index,
            probs,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        }))
    }
}

/// Offline reference for a session: conditions the whole recording, cuts the
/// same windows a session would emit on, and predicts them as one batch.
/// `latency_ms` is 0.
pub fn infer_windows(model: &Model, seq: &GestureSequence, cfg: SessionConfig) -> Result<Vec<Prediction>, ServeError> {
    cfg.validate()?;
    let smoothed = kalman_smooth(&normalized_sequence(seq, &model.pipeline)?, &model.pipeline.kalman)?;
    let frames = smoothed.frames();
    let mut ends = Vec::new();
    let mut windows = Vec::new();
    for seen in 1..=frames.len() {
        if !cfg.emits_after(seen as u64) {
            continue;
        }
        let slice = frames[seen - cfg.window..seen].to_vec();
        let resampled = resample_sequence(&smoothed.with_frames(slice)?, model.spec().frames)?;
        let points: Vec<Vec<Point3>> = resampled.frames().iter().map(|f| f.landmarks().to_vec()).collect();
        windows.push(frames_to_tensor(&points));
        ends.push(frames[seen - 1].t());
    }
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let probs = model.predict(&Tensor::stack(&windows)?)?;
    let c = probs.shape()[1];
    Ok(probs
        .data()
        .chunks(c)
        .zip(ends)
        .map(|(p, window_end)| {
            let class_index = argmax(p);
            Prediction {
                window_end,
                label: model.class_names[class_index].clone(),
                class_index,
                probs: p.to_vec(),
                latency_ms: 0.0,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyReport {
    /// Nearest-rank percentiles over the samples.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Some(Self {
            n: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: rank(0.5),
            p95_ms: rank(0.95),
            min_ms: s[0],
            max_ms: s[s.len() - 1],
        })
    }
}

/// Wall-clock time of resampling plus single-window inference, `n` times
/// over random conditioned windows of `window` frames.
pub fn bench_latency(model: &Model, window: usize, n: usize, seed: u64) -> Result<LatencyReport, ServeError> {
    if n == 0 || window < 2 {
        return Err(ServeError::Config("need n >= 1 and window >= 2".into()));
    }
    let k = model.spec().keypoints;
    let mut r = rng::stream(seed, "bench", 0);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let frames: Vec<Vec<Point3>> = (0..window)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        let mut p = [0.0; 3];
                        for v in &mut p {
                            *v = StandardNormal.sample(&mut r);
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        let started = Instant::now();
        let x = frames_to_tensor(&resample_points(&frames, model.spec().frames)?);
        let shape = x.shape().to_vec();
        let probs = model.predict(&x.reshape(&[1, shape[0], shape[1], shape[2]])?)?;
        std::hint::black_box(&probs);
        samples.push(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyReport::from_samples(&samples).expect("n >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emission_schedule() {
        let c = SessionConfig::default();
        let due: Vec<u64> = (1..=45).filter(|&s| c.emits_after(s)).collect();
        assert_eq!(due, vec![30, 35, 40, 45]);
        assert!(SessionConfig { window: 1, stride: 1 }.validate().is_err());
        assert!(SessionConfig { window: 30, stride: 0 }.validate().is_err());
    }

    #[test]
    fn latency_stats() {
        let r = LatencyReport::from_samples(&[4.0]).unwrap();
        assert_eq!((r.p50_ms, r.p95_ms, r.mean_ms), (4.0, 4.0, 4.0));
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let r = LatencyReport::from_samples(&s).unwrap();
        assert_eq!((r.p50_ms, r.p95_ms, r.min_ms, r.max_ms), (50.0, 95.0, 1.0, 100.0));
        assert!(LatencyReport::from_samples(&[]).is_none());
    }
}
