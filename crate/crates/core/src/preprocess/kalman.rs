//! Constant-velocity Kalman smoothing of landmark coordinates.
//!
//! Every coordinate carries its own `[position, velocity]` state with
//! `A = [[1, dt], [0, 1]]` and `H = [1, 0]`. The covariance recursion does
//! not depend on the measurements, so all coordinates share one covariance
//! and one gain per step.

use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::keypoint::GestureSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanSpec {
    /// Process-noise scale of the white-acceleration model.
    pub q: f64,
    /// Measurement-noise variance.
    pub r: f64,
    pub dt: f64,
    /// Initial covariance is `p0 * I`.
    pub p0: f64,
}

impl Default for KalmanSpec {
    fn default() -> Self {
        Self {
            q: 1e-3,
            r: 1e-2,
            dt: 1.0,
            p0: 1.0,
        }
    }
}

impl KalmanSpec {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.q >= 0.0) || !(self.r > 0.0) || !(self.p0 > 0.0) || !(self.dt > 0.0) {
            return Err(PreprocessError::Config(format!(
                "kalman needs q >= 0, r > 0, p0 > 0, dt > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Discrete white-noise acceleration covariance.
    fn process_noise(&self) -> [[f64; 2]; 2] {
        let dt = self.dt;
        let dt2 = dt * dt;
        [
            [self.q * dt2 * dt2 / 4.0, self.q * dt2 * dt / 2.0],
            [self.q * dt2 * dt / 2.0, self.q * dt2],
        ]
    }
}

/// A bank of identical filters, one per scalar channel.
#[derive(Clone, Debug)]
pub struct KalmanBank {
    spec: KalmanSpec,
    pos: Vec<f64>,
    vel: Vec<f64>,
    cov: [[f64; 2]; 2],
    started: bool,
}

impl KalmanBank {
    pub fn new(spec: KalmanSpec, channels: usize) -> Result<Self, PreprocessError> {
        spec.validate()?;
        Ok(Self {
            cov: [[spec.p0, 0.0], [0.0, spec.p0]],
            spec,
            pos: vec![0.0; channels],
            vel: vec![0.0; channels],
            started: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.pos.len()
    }

    /// Feeds one measurement per channel and returns the filtered positions.
    /// The first call only initializes the state to `[z, 0]`.
    pub fn step(&mut self, z: &[f64]) -> &[f64] {
        assert_eq!(z.len(), self.pos.len(), "channel count");
        if !self.started {
            self.pos.copy_from_slice(z);
            self.vel.iter_mut().for_each(|v| *v = 0.0);
            self.started = true;
            return &self.pos;
        }
        let dt = self.spec.dt;
        let q = self.spec.process_noise();
        let p = self.cov;
        // P- = A P A^T + Q
        let p00 = p[0][0] + dt * (p[1][0] + p[0][1]) + dt * dt * p[1][1] + q[0][0];
        let p01 = p[0][1] + dt * p[1][1] + q[0][1];
        let p10 = p[1][0] + dt * p[1][1] + q[1][0];
        let p11 = p[1][1] + q[1][1];
        let s = p00 + self.spec.r;
        let k0 = p00 / s;
        let k1 = p10 / s;
        self.cov = [[(1.0 - k0) * p00, (1.0 - k0) * p01], [p10 - k1 * p00, p11 - k1 * p01]];
        for ((x, v), &zi) in self.pos.iter_mut().zip(self.vel.iter_mut()).zip(z) {
            let pred_x = *x + dt * *v;
            let pred_v = *v;
            let innovation = zi - pred_x;
            *x = pred_x + k0 * innovation;
            *v = pred_v + k1 * innovation;
        }
        &self.pos
    }
}

/// Filters every landmark coordinate of the sequence independently,
/// left to right. Output has the same length and frame indices.
pub fn kalman_smooth(seq: &GestureSequence, spec: &KalmanSpec) -> Result<GestureSequence, PreprocessError> {
    if seq.is_empty() {
        return Err(PreprocessError::Empty);
    }
    if seq.frames().iter().any(|f| f.has_missing()) {
        let t = seq
            .frames()
            .iter()
            .find(|f| f.has_missing())
            .map(|f| f.t())
            .unwrap_or(0);
        return Err(PreprocessError::ImputationRequired { t });
    }
    let k = seq.layout().k();
    let mut bank = KalmanBank::new(spec.clone(), k * 3)?;
    let mut flat = vec![0.0; k * 3];
    let mut frames = Vec::with_capacity(seq.len());
    for f in seq.frames() {
        for (dst, p) in flat.chunks_exact_mut(3).zip(f.landmarks()) {
            dst.copy_from_slice(p);
        }
        let out = bank.step(&flat);
        frames.push(f.with_landmarks(out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()));
    }
    Ok(seq.with_frames(frames)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoint::{KeypointFrame, LayoutSpec};

    fn scalar_run(z: &[f64], spec: KalmanSpec) -> Vec<f64> {
        let mut bank = KalmanBank::new(spec, 1).unwrap();
        z.iter().map(|&v| bank.step(&[v])[0]).collect()
    }

    #[test]
    fn constant_measurements_pass_through() {
        let out = scalar_run(&[0.7; 50], KalmanSpec::default());
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn tiny_measurement_noise_tracks_measurements() {
        let z: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let spec = KalmanSpec {
            r: 1e-12,
            ..KalmanSpec::default()
        };
        let out = scalar_run(&z, spec);
        for (a, b) in out.iter().zip(&z) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_spec() {
        for spec in [
            KalmanSpec {
                r: 0.0,
                ..KalmanSpec::default()
            },
            KalmanSpec {
                q: -1.0,
                ..KalmanSpec::default()
            },
            KalmanSpec {
                p0: 0.0,
                ..KalmanSpec::default()
            },
        ] {
            assert!(KalmanBank::new(spec, 1).is_err());
        }
    }

    #[test]
    fn sequence_length_preserved() {
        let l = LayoutSpec::compact63();
        let frames = (0..7)
            .map(|t| KeypointFrame::new(t, vec![[t as f64, 0.0, 1.0]; 63], l.clone()).unwrap())
            .collect();
        let seq = GestureSequence::new(frames, "s").unwrap();
        let out = kalman_smooth(&seq, &KalmanSpec::default()).unwrap();
        assert_eq!(out.len(), 7);
        assert_eq!(out.frames()[3].t(), 3);
        assert_eq!(out.frames()[0].landmarks()[0], [0.0, 0.0, 1.0]);
    }
}
