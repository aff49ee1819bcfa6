use rand::Rng;

use super::{ModelMode, ModelSpec, COORDS};
use crate::nn::LstmWeights;
use crate::rng;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T = f64> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Trainable parameters. Gradients use the same structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T = f64> {
    pub blocks: Vec<ConvBlock<T>>,
    /// Per-time-step projection; absent in the literal table graph.
    pub proj: Option<(Tensor<T>, Tensor<T>)>,
    pub lstm1: [LstmWeights<T>; 2],
    pub lstm2: [LstmWeights<T>; 2],
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, r: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| r.random_range(-limit..limit))
}

fn init_lstm(d: usize, u: usize, r: &mut impl Rng) -> LstmWeights {
    let mut bias = Tensor::zeros(&[4 * u]);
    bias.data_mut()[u..2 * u].fill(1.0);
    LstmWeights {
        w_x: glorot(&[d, 4 * u], d, 4 * u, r),
        w_h: glorot(&[u, 4 * u], u, 4 * u, r),
        bias,
    }
}

impl Params<f64> {
    pub(super) fn init(spec: &ModelSpec, seed: u64) -> Self {
        let k = spec.kernel;
        let mut c_in = COORDS;
        let blocks = spec
            .filters
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut r = rng::stream(seed, "init-conv", i as u64);
                let b = ConvBlock {
                    kernel: glorot(&[k, k, c_in, c], k * k * c_in, k * k * c, &mut r),
                    bias: Tensor::zeros(&[c]),
                    gamma: Tensor::full(&[c], 1.0),
                    beta: Tensor::zeros(&[c]),
                };
                c_in = c;
                b
            })
            .collect();
        let p = spec.lstm_proj_dim;
        let proj = (spec.mode == ModelMode::TimePreserving).then(|| {
            let f = spec.conv_features();
            let mut r = rng::stream(seed, "init-proj", 0);
            (glorot(&[f, p], f, p, &mut r), Tensor::zeros(&[p]))
        });
        let u = spec.lstm_units;
        let lstm = |layer: u64, d: usize| {
            let mut r = rng::stream(seed, "init-lstm", layer);
            [init_lstm(d, u, &mut r), init_lstm(d, u, &mut r)]
        };
        let lstm1 = lstm(1, p);
        let lstm2 = lstm(2, 2 * u);
        let mut r = rng::stream(seed, "init-head", 0);
        Self {
            blocks,
            proj,
            lstm1,
            lstm2,
            head_w: glorot(&[2 * u, spec.classes], 2 * u, spec.classes, &mut r),
            head_b: Tensor::zeros(&[spec.classes]),
        }
    }
}

impl<T: Element> Params<T> {
    /// Every tensor with its stable name, in storage order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let n = i + 1;
            out.push((format!("block{n}.conv.kernel"), &b.kernel));
            out.push((format!("block{n}.conv.bias"), &b.bias));
            out.push((format!("block{n}.bn.gamma"), &b.gamma));
            out.push((format!("block{n}.bn.beta"), &b.beta));
        }
        if let Some((w, b)) = &self.proj {
            out.push(("proj.weights".into(), w));
            out.push(("proj.bias".into(), b));
        }
        for (layer, pair) in [("lstm1", &self.lstm1), ("lstm2", &self.lstm2)] {
            for (dir, w) in ["fwd", "bwd"].iter().zip(pair) {
                out.push((format!("{layer}.{dir}.w_x"), &w.w_x));
                out.push((format!("{layer}.{dir}.w_h"), &w.w_h));
                out.push((format!("{layer}.{dir}.bias"), &w.bias));
            }
        }
        out.push(("head.weights".into(), &self.head_w));
        out.push(("head.bias".into(), &self.head_b));
        out
    }

    /// Mutable view in the same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.kernel, &mut b.bias, &mut b.gamma, &mut b.beta]);
        }
        if let Some((w, b)) = &mut self.proj {
            out.extend([w, b]);
        }
        for w in self.lstm1.iter_mut().chain(self.lstm2.iter_mut()) {
            out.extend([&mut w.w_x, &mut w.w_h, &mut w.bias]);
        }
        out.extend([&mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(T::zero());
        }
        z
    }

    pub fn cast<U: Element>(&self) -> Params<U> {
        let cast_lstm = |w: &LstmWeights<T>| LstmWeights {
            w_x: w.w_x.cast(),
            w_h: w.w_h.cast(),
            bias: w.bias.cast(),
        };
        Params {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    kernel: b.kernel.cast(),
                    bias: b.bias.cast(),
                    gamma: b.gamma.cast(),
                    beta: b.beta.cast(),
                })
                .collect(),
            proj: self.proj.as_ref().map(|(w, b)| (w.cast(), b.cast())),
            lstm1: [cast_lstm(&self.lstm1[0]), cast_lstm(&self.lstm1[1])],
            lstm2: [cast_lstm(&self.lstm2[0]), cast_lstm(&self.lstm2[1])],
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
        }
    }
}

/// Batch-norm running statistics per conv block.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f64> {
    pub mean: Vec<Tensor<T>>,
    pub var: Vec<Tensor<T>>,
}

impl RunningStats<f64> {
    pub(super) fn new(filters: &[usize]) -> Self {
        Self {
            mean: filters.iter().map(|&c| Tensor::zeros(&[c])).collect(),
            var: filters.iter().map(|&c| Tensor::full(&[c], 1.0)).collect(),
        }
    }
}

impl<T: Element> RunningStats<T> {
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.mean.iter().zip(&self.var).enumerate() {
            out.push((format!("block{}.bn.running_mean", i + 1), m));
            out.push((format!("block{}.bn.running_var", i + 1), v));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for (m, v) in self.mean.iter_mut().zip(self.var.iter_mut()) {
            out.push(m);
            out.push(v);
        }
        out
    }

    pub fn count(&self) -> usize {
        self.mean.iter().chain(&self.var).map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(Tensor::cast).collect(),
            var: self.var.iter().map(Tensor::cast).collect(),
        }
    }
}
