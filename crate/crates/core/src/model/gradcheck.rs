use rand::Rng;
use serde::Serialize;

use super::{Model, ModelError, ModelSpec, COORDS};
use crate::nn::gradcheck::{relative_error, FLOOR, STEP};
use crate::nn::softmax_cross_entropy;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelGradCheck {
    pub max_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub probes: usize,
    /// Draws rejected because a probe crossed a ReLU kink or changed a
    /// max-pool winner.
    pub skipped: usize,
}

impl Model {
    /// Compares the analytic parameter gradient of the weighted
    /// cross-entropy with central differences on `per_tensor` random
    /// coordinates of every parameter tensor. Runs in training mode with
    /// dropout off.
    pub fn gradient_check(
        &self,
        x: &Tensor,
        labels: &[usize],
        weights: Option<&[f64]>,
        per_tensor: usize,
        seed: u64,
    ) -> Result<ModelGradCheck, ModelError> {
        let (logits, base) = self.forward_train(x, None)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, labels, weights)?;
        let grads = self.backward(&base, &dlogits)?;
        let analytic: Vec<(String, Vec<f64>)> =
            grads.named().into_iter().map(|(n, t)| (n, t.data().to_vec())).collect();
        let mut probe = self.clone();
        let mut loss_at = |ti: usize, idx: usize, v: f64| -> Result<Option<f64>, ModelError> {
            let orig = {
                let mut slots = probe.params.tensors_mut();
                std::mem::replace(&mut slots[ti].data_mut()[idx], v)
            };
            let (l, cache) = probe.forward_train(x, None)?;
            probe.params.tensors_mut()[ti].data_mut()[idx] = orig;
            if !cache.same_branches(&base) {
                return Ok(None);
            }
            Ok(Some(softmax_cross_entropy(&l, labels, weights)?.0))
        };
        let mut out = ModelGradCheck {
            max_error: 0.0,
            worst: String::new(),
            probes: 0,
            skipped: 0,
        };
        let current: Vec<Vec<f64>> = self.params.named().iter().map(|(_, t)| t.data().to_vec()).collect();
        for (ti, (name, g)) in analytic.iter().enumerate() {
            let mut r = rng::stream(seed, "gc-model", ti as u64);
            let mut done = 0;
            let mut attempts = 0;
            while done < per_tensor.min(g.len()) && attempts < 20 * per_tensor {
                attempts += 1;
                let idx = r.random_range(0..g.len());
                let x0 = current[ti][idx];
                let (Some(up), Some(down)) = (loss_at(ti, idx, x0 + STEP)?, loss_at(ti, idx, x0 - STEP)?) else {
                    out.skipped += 1;
                    continue;
                };
                let e = relative_error(g[idx], (up - down) / (2.0 * STEP), FLOOR);
                if e > out.max_error || out.worst.is_empty() {
                    out.max_error = out.max_error.max(e);
                    out.worst = format!("{name}[{idx}]");
                }
                out.probes += 1;
                done += 1;
            }
        }
        Ok(out)
    }
}

/// End-to-end check of a freshly initialized scaled model on a random batch
/// of two sequences, all derived from `seed`.
pub fn scaled_gradient_check(seed: u64, per_tensor: usize) -> Result<ModelGradCheck, ModelError> {
    let classes = 5;
    let mut spec = ModelSpec::scaled(classes);
    spec.dropout = 0.0;
    let model = Model::build(spec, seed)?;
    let s = model.spec();
    let mut r = rng::stream(seed, "gc-model-data", 0);
    let n = 2;
    let x = Tensor::from_fn(&[n, s.frames, s.keypoints, COORDS], |_| r.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let weights: Vec<f64> = (0..classes).map(|_| r.random_range(0.5..2.0)).collect();
    model.gradient_check(&x, &labels, Some(&weights), per_tensor, seed)
}
