//! Seeded synthetic gestures: static face and body, hands tracing
//! parametric paths with Gaussian jitter. Used for desk-scale end-to-end
//! training and as a certified-separable benchmark.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoint::{
    write_sequence, BlockKind, DatasetManifest, GestureSequence, KeypointError, KeypointFrame, LayoutSpec,
    ManifestEntry, Point3,
};
use crate::preprocess::{preprocess_pipeline, PipelineConfig, PreprocessError};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;
use crate::train::{Dataset, TrainError};

/// Shoulder-to-shoulder distance of every generated frame.
pub const SHOULDER_WIDTH: f64 = 0.3;
// 0.625 - 0.325 is exactly 0.3 in binary64.
const RIGHT_SHOULDER: Point3 = [0.325, 0.55, 0.0];
const LEFT_SHOULDER: Point3 = [0.625, 0.55, 0.0];

pub const MIN_FRAMES: usize = 20;
pub const MAX_FRAMES: usize = 60;
pub const DEFAULT_JITTER: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Circle,
    Line,
    FigureEight,
}

impl Primitive {
    /// Unit-amplitude offset at angle `a`.
    fn offset(self, a: f64) -> [f64; 2] {
        match self {
            Self::Circle => [a.cos(), a.sin()],
            Self::Line => [a.sin(), 0.0],
            Self::FigureEight => [a.sin(), (2.0 * a).sin() / 2.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandPath {
    pub primitive: Primitive,
    pub amplitude: f64,
    /// Cycles over the whole gesture.
    pub frequency: f64,
    pub phase: f64,
    /// Centre of the path in image coordinates.
    pub center: [f64; 2],
}

impl HandPath {
    /// Wrist position at normalized time `s` in `[0, 1]`.
    pub fn at(&self, s: f64) -> [f64; 2] {
        let o = self.primitive.offset(TAU * self.frequency * s + self.phase);
        [
            self.center[0] + self.amplitude * o[0],
            self.center[1] + self.amplitude * o[1],
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureTemplate {
    pub class_id: usize,
    /// Left hand, right hand.
    pub hands: [HandPath; 2],
    /// Standard deviation of per-sequence path perturbation and per-frame
    /// landmark noise.
    pub jitter: f64,
}

impl GestureTemplate {
    /// Deterministic family of `classes` templates. Primitives cycle through
    /// circle, line and figure-eight; the phase advances by `TAU / 7` every
    /// three classes, so 21 classes are distinct.
    pub fn family(classes: usize, jitter: f64) -> Vec<Self> {
        (0..classes)
            .map(|c| {
                let prims = [Primitive::Circle, Primitive::Line, Primitive::FigureEight];
                let step = (c / 3) as f64 * TAU / 7.0;
                let right = HandPath {
                    primitive: prims[c % 3],
                    amplitude: 0.12,
                    frequency: 1.0,
                    phase: step,
                    center: [0.3, 0.7],
                };
                let left = HandPath {
                    primitive: prims[(c + 1 + c / 3) % 3],
                    amplitude: 0.06,
                    frequency: 1.0 + (c % 2) as f64,
                    phase: -step,
                    center: [0.65, 0.75],
                };
                Self {
                    class_id: c,
                    hands: [left, right],
                    jitter,
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.jitter >= 0.0) {
            return Err(SynthError::Config("jitter must be non-negative".into()));
        }
        if self.hands.iter().any(|h| !(h.amplitude > 0.0)) {
            return Err(SynthError::Config("amplitudes must be positive".into()));
        }
        Ok(())
    }

    /// Whether two templates differ in some path parameter by at least
    /// three jitter scales.
    pub fn distinct_from(&self, other: &Self) -> bool {
        let gap = 3.0 * self.jitter.max(other.jitter);
        self.hands.iter().zip(&other.hands).any(|(a, b)| {
            a.primitive != b.primitive
                || (a.amplitude - b.amplitude).abs() >= gap
                || (a.frequency - b.frequency).abs() >= gap
                || (a.phase - b.phase).abs() >= gap
                || (a.center[0] - b.center[0]).abs() >= gap
                || (a.center[1] - b.center[1]).abs() >= gap
        })
    }
}

/// Hand landmark offsets from the wrist: five fingers of four joints fanned
/// upwards.
fn hand_shape() -> [[f64; 3]; 21] {
    let mut out = [[0.0; 3]; 21];
    for f in 0..5 {
        let angle = (-60.0 + 30.0 * f as f64).to_radians() - std::f64::consts::FRAC_PI_2;
        for j in 0..4 {
            let r = 0.018 * (j + 1) as f64;
            out[1 + 4 * f + j] = [r * angle.cos(), r * angle.sin(), -0.005 * (j + 1) as f64];
        }
    }
    out
}

fn static_points(kind: BlockKind, n: usize) -> Vec<Point3> {
    match kind {
        BlockKind::Face => (0..n)
            .map(|i| {
                let a = TAU * i as f64 / n as f64;
                let r = 0.04 + 0.05 * ((i * 7) % 13) as f64 / 13.0;
                [0.475 + r * a.cos(), 0.3 + 1.3 * r * a.sin(), -0.02]
            })
            .collect(),
        BlockKind::Body => (0..n)
            .map(|i| match i {
                11 => LEFT_SHOULDER,
                12 => RIGHT_SHOULDER,
                _ => {
                    let side = if i % 2 == 0 { -1.0 } else { 1.0 };
                    [0.475 + side * 0.01 * i as f64, 0.3 + 0.03 * i as f64, 0.0]
                }
            })
            .collect(),
        _ => vec![[0.0; 3]; n],
    }
}

/// One raw-space sequence in `layout`. Length is uniform in
/// `MIN_FRAMES..=MAX_FRAMES`; timestamps are frame indices.
pub fn synth_sequence(
    template: &GestureTemplate,
    layout: &std::sync::Arc<LayoutSpec>,
    rng: &mut StreamRng,
    source_id: &str,
) -> Result<GestureSequence, SynthError> {
    template.validate()?;
    if layout.block(BlockKind::Body).map_or(0, |b| b.len()) < 13 {
        return Err(SynthError::Config(format!("layout {} has no shoulders", layout.name())));
    }
    let len = rng.random_range(MIN_FRAMES..=MAX_FRAMES);
    let j = template.jitter;
    let noise = Normal::new(0.0, j).expect("finite jitter");
    let mut paths = template.hands;
    for p in &mut paths {
        p.center[0] += noise.sample(rng);
        p.center[1] += noise.sample(rng);
        p.amplitude *= (1.0 + noise.sample(rng)).max(0.1);
        p.phase += TAU * noise.sample(rng);
    }
    let shape = hand_shape();
    let mut base = vec![[0.0; 3]; layout.k()];
    for b in layout.blocks() {
        let pts = static_points(b.kind, b.len());
        base[b.start..b.start + b.len()].copy_from_slice(&pts);
    }
    let hands: Vec<_> = [BlockKind::LeftHand, BlockKind::RightHand]
        .iter()
        .map(|&k| layout.block(k).cloned())
        .collect();
    let mut frames = Vec::with_capacity(len);
    for i in 0..len {
        let s = i as f64 / (len - 1) as f64;
        let mut lm = base.clone();
        for (path, block) in paths.iter().zip(&hands) {
            let Some(block) = block else { continue };
            let w = path.at(s);
            for (l, off) in shape.iter().enumerate().take(block.len()) {
                let mut p = [w[0] + off[0], w[1] + off[1], off[2]];
                if j > 0.0 {
                    for v in &mut p {
                        *v += noise.sample(rng);
                    }
                }
                lm[block.start + l] = p;
            }
        }
        frames.push(KeypointFrame::new(i as i64, lm, layout.clone())?);
    }
    Ok(GestureSequence::new(frames, source_id)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub jitter: f64,
    pub layout: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 40,
            seed: 0,
            jitter: DEFAULT_JITTER,
            layout: "holistic543".into(),
        }
    }
}

pub fn class_name(c: usize) -> String {
    format!("g{c:02}")
}

/// Generates every sequence in memory, class-major.
pub fn synth_sequences(cfg: &SynthConfig) -> Result<Vec<GestureSequence>, SynthError> {
    if cfg.classes < 2 || cfg.per_class < 2 {
        return Err(SynthError::Config(
            "need at least 2 classes and 2 samples per class".into(),
        ));
    }
    let layout = LayoutSpec::by_name(&cfg.layout)?;
    let templates = GestureTemplate::family(cfg.classes, cfg.jitter);
    (0..cfg.classes * cfg.per_class)
        .into_par_iter()
        .map(|i| {
            let (c, n) = (i / cfg.per_class, i % cfg.per_class);
            let id = format!("{}_{n:03}", class_name(c));
            let mut r = rng::stream(cfg.seed, "synth", i as u64);
            Ok(synth_sequence(&templates[c], &layout, &mut r, &id)?.with_label(class_name(c)))
        })
        .collect()
}

/// Generates and preprocesses a dataset without touching the disk.
pub fn synth_in_memory(cfg: &SynthConfig, pipeline: &PipelineConfig) -> Result<Dataset, SynthError> {
    let seqs = synth_sequences(cfg)?;
    let xs = seqs
        .par_iter()
        .map(|s| preprocess_pipeline(s, pipeline))
        .collect::<Result<Vec<_>, _>>()?;
    let x = Tensor::stack(&xs).map_err(|e| SynthError::Config(e.to_string()))?;
    let labels = (0..seqs.len()).map(|i| i / cfg.per_class).collect();
    let ids = seqs.iter().map(|s| s.source_id.clone()).collect();
    Dataset::new(x, labels, ids, (0..cfg.classes).map(class_name).collect())
        .map_err(|e| SynthError::Config(e.to_string()))
}

/// Writes `g00_000.kpjl`... into `out_dir` plus `manifest.json`, and
/// returns the manifest.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    let seqs = synth_sequences(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    seqs.par_iter()
        .try_for_each(|s| write_sequence(s, out_dir.join(format!("{}.kpjl", s.source_id))))?;
    let entries = seqs
        .iter()
        .map(|s| ManifestEntry {
            path: format!("{}.kpjl", s.source_id),
            label: s.label.clone().unwrap_or_default(),
        })
        .collect();
    let mut manifest = DatasetManifest::new((0..cfg.classes).map(class_name).collect(), cfg.seed, entries);
    manifest.save(out_dir.join("manifest.json"))?;
    manifest.base_dir = out_dir.to_path_buf();
    Ok(manifest)
}

/// Leave-one-out nearest-centroid accuracy on flattened inputs. Distance
/// ties go to the lowest class index.
pub fn separability_oracle(data: &Dataset) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty("dataset"));
    }
    let c = data.classes();
    let d = data.x.len() / data.len();
    let mut sums = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (i, &y) in data.labels.iter().enumerate() {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(data.x.outer(i)) {
            *s += v;
        }
    }
    let correct = (0..data.len())
        .into_par_iter()
        .filter(|&i| {
            let x = data.x.outer(i);
            let y = data.labels[i];
            let mut best = (usize::MAX, f64::INFINITY);
            for k in 0..c {
                let n = counts[k] - usize::from(k == y);
                if n == 0 {
                    continue;
                }
                let dist: f64 = sums[k]
                    .iter()
                    .zip(x)
                    .map(|(s, v)| {
                        let own = if k == y { v } else { &0.0 };
                        let centroid = (s - own) / n as f64;
                        (centroid - v).powi(2)
                    })
                    .sum();
                if dist < best.1 {
                    best = (k, dist);
                }
            }
            best.0 == y
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Preprocesses the manifest with `cfg`, then runs the oracle.
pub fn separability_oracle_manifest(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<f64, TrainError> {
    separability_oracle(&Dataset::from_manifest(manifest, cfg)?)
}
