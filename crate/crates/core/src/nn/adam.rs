use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 50,
            decay_factor: 0.1,
        }
    }
}

impl AdamConfig {
    /// Step schedule `lr * factor^floor(epoch / every)` for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates for a list of flat parameter buffers.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every buffer.
    pub fn update(
        &mut self,
        cfg: &AdamConfig,
        lr: f64,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
    ) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Config("optimizer buffer count changed".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(NnError::Config("optimizer buffer size changed".into()));
            }
            for i in 0..m.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
