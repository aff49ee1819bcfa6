//! Geometric and temporal augmentation of normalized sequences.
//!
//! Transforms act about the origin (the reference shoulder after
//! normalization) and run in a fixed order: rotation about the vertical
//! axis, uniform scaling, temporal shift with edge hold, additive noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::keypoint::{GestureSequence, Point3};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rot_max_deg: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub tshift_frac: f64,
    pub noise_sigma: f64,
    pub copies_per_sequence: usize,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rot_max_deg: 15.0,
            scale_lo: 0.9,
            scale_hi: 1.1,
            tshift_frac: 0.05,
            noise_sigma: 0.01,
            copies_per_sequence: 4,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Every transform disabled.
    pub fn identity() -> Self {
        Self {
            rot_max_deg: 0.0,
            scale_lo: 1.0,
            scale_hi: 1.0,
            tshift_frac: 0.0,
            noise_sigma: 0.0,
            copies_per_sequence: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        let ok = (0.0..90.0).contains(&self.rot_max_deg)
            && self.scale_lo > 0.0
            && self.scale_lo <= self.scale_hi
            && (0.0..0.5).contains(&self.tshift_frac)
            && self.noise_sigma >= 0.0
            && self.noise_sigma.is_finite()
            && self.scale_hi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PreprocessError::Config(format!("invalid augmentation spec {self:?}")))
        }
    }
}

/// The random parameters of one augmented copy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub theta_rad: f64,
    pub scale: f64,
    /// Positive values delay the gesture.
    pub shift_frames: i64,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(spec: &AugmentSpec, len: usize, rng: &mut R) -> Self {
        let max = spec.rot_max_deg.to_radians();
        let theta_rad = rng.random_range(-max..=max);
        let scale = rng.random_range(spec.scale_lo..=spec.scale_hi);
        let frac = rng.random_range(-spec.tshift_frac..=spec.tshift_frac);
        Self {
            theta_rad,
            scale,
            shift_frames: (frac * len as f64).round() as i64,
        }
    }
}

/// `(x, z) -> (x cos + z sin, -x sin + z cos)`, `y` unchanged.
pub fn rotate_y(p: &Point3, theta: f64) -> Point3 {
    let (s, c) = theta.sin_cos();
    [p[0] * c + p[2] * s, p[1], -p[0] * s + p[2] * c]
}

/// Applies a fixed draw; noise is drawn from `rng` only when `sigma > 0`.
pub fn apply_augment<R: Rng + ?Sized>(
    seq: &GestureSequence,
    draw: AugmentDraw,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<GestureSequence, PreprocessError> {
    if let Some(f) = seq.frames().iter().find(|f| f.has_missing()) {
        return Err(PreprocessError::ImputationRequired { t: f.t() });
    }
    let len = seq.len() as i64;
    let mut geometric: Vec<Vec<Point3>> = seq
        .frames()
        .iter()
        .map(|f| {
            f.landmarks()
                .iter()
                .map(|p| {
                    let mut q = if draw.theta_rad != 0.0 {
                        rotate_y(p, draw.theta_rad)
                    } else {
                        *p
                    };
                    if draw.scale != 1.0 {
                        q = [q[0] * draw.scale, q[1] * draw.scale, q[2] * draw.scale];
                    }
                    q
                })
                .collect()
        })
        .collect();
    if draw.shift_frames != 0 {
        geometric = (0..len)
            .map(|t| {
                let src = (t - draw.shift_frames).clamp(0, len - 1);
                geometric[src as usize].clone()
            })
            .collect();
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| PreprocessError::Config(e.to_string()))?;
        for frame in &mut geometric {
            for p in frame.iter_mut() {
                for v in p.iter_mut() {
                    *v += normal.sample(rng);
                }
            }
        }
    }
    let frames = seq
        .frames()
        .iter()
        .zip(geometric)
        .map(|(f, lm)| f.with_landmarks(lm))
        .collect();
    Ok(seq.with_frames(frames)?)
}

/// Draws the transform parameters from `rng`, then applies them.
pub fn augment_sequence<R: Rng + ?Sized>(
    seq: &GestureSequence,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<GestureSequence, PreprocessError> {
    spec.validate()?;
    let draw = AugmentDraw::sample(spec, seq.len(), rng);
    apply_augment(seq, draw, spec.noise_sigma, rng)
}

/// The `copies_per_sequence` augmented variants of one normalized sequence.
/// Copy `c` draws from a stream keyed by `(spec.seed, source_id, c)`, so
/// results do not depend on processing order.
pub fn augmented_copies(seq: &GestureSequence, spec: &AugmentSpec) -> Result<Vec<GestureSequence>, PreprocessError> {
    spec.validate()?;
    (0..spec.copies_per_sequence)
        .map(|c| {
            let mut r = rng::stream_for_id(spec.seed, "augment", &format!("{}#{c}", seq.source_id));
            let mut out = augment_sequence(seq, spec, &mut r)?;
            out.source_id = format!("{}_aug{c}", seq.source_id);
            Ok(out)
        })
        .collect()
}
