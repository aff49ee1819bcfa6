//! Central finite differences for checking analytic gradients, and a
//! per-layer check suite driven by a seed.

use rand::Rng;

use super::lstm::LstmWeights;
use crate::rng;
use crate::tensor::Tensor;

/// Probe step.
pub const STEP: f64 = 1e-5;
/// Denominator floor for the relative error. Central differences at
/// [`STEP`] carry roundoff near 1e-10 on O(1) losses, so gradients smaller
/// than the floor are effectively held to an absolute error of 1e-10.
pub const FLOOR: f64 = 1e-5;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Largest [`relative_error`] over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    /// Worst relative error over every input and parameter coordinate.
    pub max_error: f64,
}

fn rand_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// `sum(out * proj)`: a scalar whose gradient with respect to `out` is `proj`.
fn probe(out: &Tensor, proj: &Tensor) -> f64 {
    out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

fn check_arg(analytic: &Tensor, x: &Tensor, f: impl Fn(Tensor) -> f64) -> f64 {
    let num = numeric_gradient(
        |v| f(Tensor::from_vec(x.shape(), v.to_vec()).expect("same shape")),
        x.data(),
        STEP,
    );
    max_relative_error(analytic.data(), &num, FLOOR)
}

fn rand_lstm(d: usize, u: usize, r: &mut impl Rng) -> LstmWeights {
    LstmWeights {
        w_x: rand_tensor(&[d, 4 * u], r),
        w_h: rand_tensor(&[u, 4 * u], r),
        bias: rand_tensor(&[4 * u], r),
    }
}

fn dense(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gc-dense", 0);
    let (n, di, dout) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..5));
    let x = rand_tensor(&[n, di], &mut r);
    let w = rand_tensor(&[di, dout], &mut r);
    let b = rand_tensor(&[dout], &mut r);
    let p = rand_tensor(&[n, dout], &mut r);
    let g = super::dense_backward(&x, &w, &p).expect("valid shapes");
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| probe(&super::dense(x, w, b).expect("valid"), &p);
    [
        check_arg(&g.input, &x, |v| f(&v, &w, &b)),
        check_arg(&g.weights, &w, |v| f(&x, &v, &b)),
        check_arg(&g.bias, &b, |v| f(&x, &w, &v)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn conv(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gc-conv", 0);
    let k = if r.random_bool(0.8) { 3 } else { 5 };
    let s = [
        r.random_range(1..3),
        r.random_range(1..6),
        r.random_range(1..6),
        r.random_range(1..4),
    ];
    let co = r.random_range(1..4);
    let x = rand_tensor(&s, &mut r);
    let w = rand_tensor(&[k, k, s[3], co], &mut r);
    let b = rand_tensor(&[co], &mut r);
    let p = rand_tensor(&[s[0], s[1], s[2], co], &mut r);
    let g = super::conv2d_backward(&x, &w, &p).expect("valid shapes");
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| probe(&super::conv2d(x, w, b).expect("valid"), &p);
    [
        check_arg(&g.input, &x, |v| f(&v, &w, &b)),
        check_arg(&g.kernel, &w, |v| f(&x, &v, &b)),
        check_arg(&g.bias, &b, |v| f(&x, &w, &v)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn pool(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gc-pool", 0);
    let window = if r.random_bool(0.5) { (2, 2) } else { (1, 2) };
    let s = [
        r.random_range(1..3),
        r.random_range(2..7),
        r.random_range(2..7),
        r.random_range(1..3),
    ];
    // A finite difference across a tie is meaningless; redraw until every
    // window's winner leads its runner-up by well over the probe step.
    let x = loop {
        let x = rand_tensor(&s, &mut r);
        if super::pool::min_window_margin(&x, window) > 10.0 * STEP {
            break x;
        }
    };
    let pooled = super::maxpool2d(&x, window).expect("valid shapes");
    let p = rand_tensor(pooled.output.shape(), &mut r);
    let g = super::maxpool2d_backward(x.shape(), &pooled.argmax, &p).expect("valid");
    check_arg(&g, &x, |v| {
        probe(&super::maxpool2d(&v, window).expect("valid").output, &p)
    })
}

fn batchnorm(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gc-bn", 0);
    let s = [
        r.random_range(2..4),
        r.random_range(1..4),
        r.random_range(1..4),
        r.random_range(1..4),
    ];
    let x = rand_tensor(&s, &mut r);
    let gamma = rand_tensor(&[s[3]], &mut r);
    let beta = rand_tensor(&[s[3]], &mut r);
    let p = rand_tensor(&s, &mut r);
    let eps = super::batchnorm::DEFAULT_EPS;
    let (_, cache) = super::batchnorm_train(&x, &gamma, &beta, eps).expect("valid");
    let g = super::batchnorm_backward(&cache, &gamma, &p).expect("valid");
    let f = |x: &Tensor, gm: &Tensor, bt: &Tensor| probe(&super::batchnorm_train(x, gm, bt, eps).expect("valid").0, &p);
    [
        check_arg(&g.input, &x, |v| f(&v, &gamma, &beta)),
        check_arg(&g.gamma, &gamma, |v| f(&x, &v, &beta)),
        check_arg(&g.beta, &beta, |v| f(&x, &gamma, &v)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn bilstm(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gc-lstm", 0);
    let seq = seed.is_multiple_of(2);
    let (n, t, d, u) = if seed == 0 {
        (1, 3, 4, 3)
    } else {
        (
            r.random_range(1..3),
            r.random_range(1..5),
            r.random_range(1..5),
            r.random_range(1..4),
        )
    };
    let x = rand_tensor(&[n, t, d], &mut r);
    let fw = rand_lstm(d, u, &mut r);
    let bw = rand_lstm(d, u, &mut r);
    let (y, cache) = super::bilstm(&x, &fw, &bw, seq).expect("valid");
    let p = rand_tensor(y.shape(), &mut r);
    let g = super::bilstm_backward(&x, &cache, &fw, &bw, &p, seq).expect("valid");
    let f =
        |x: &Tensor, fw: &LstmWeights, bw: &LstmWeights| probe(&super::bilstm(x, fw, bw, seq).expect("valid").0, &p);
    let mut worst = check_arg(&g.input, &x, |v| f(&v, &fw, &bw));
    for forward in [true, false] {
        let (base, grads) = if forward { (&fw, &g.fwd) } else { (&bw, &g.bwd) };
        let run = |w: &LstmWeights| if forward { f(&x, w, &bw) } else { f(&x, &fw, w) };
        let e = [
            check_arg(&grads.w_x, &base.w_x, |v| run(&LstmWeights { w_x: v, ..base.clone() })),
            check_arg(&grads.w_h, &base.w_h, |v| run(&LstmWeights { w_h: v, ..base.clone() })),
            check_arg(&grads.bias, &base.bias, |v| {
                run(&LstmWeights {
                    bias: v,
                    ..base.clone()
                })
            }),
        ];
        worst = e.into_iter().fold(worst, f64::max);
    }
    worst
}

fn activations(seed: u64) -> (f64, f64) {
    let mut r = rng::stream(seed, "gc-act", 0);
    let len = r.random_range(1..20);
    // Stay clear of the ReLU kink.
    let x = Tensor::from_fn(&[len], |_| {
        let v: f64 = r.random_range(0.01..1.0);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let p = rand_tensor(&[len], &mut r);
    let y = super::relu(&x);
    let g = super::relu_backward(&y, &p).expect("valid");
    let relu = check_arg(&g, &x, |v| probe(&super::relu(&v), &p));
    let rate = 0.5;
    let mask_rng = || rng::stream(seed, "gc-mask", 0);
    let (_, mask) = super::dropout(&x, rate, &mut mask_rng()).expect("valid rate");
    let g = super::dropout_backward(&mask, rate, &p).expect("valid");
    let drop = check_arg(&g, &x, |v| {
        probe(&super::dropout(&v, rate, &mut mask_rng()).expect("valid rate").0, &p)
    });
    (relu, drop)
}

fn cross_entropy(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "gc-xent", 0);
    let (n, c) = (r.random_range(1..5), r.random_range(2..6));
    let x = Tensor::from_fn(&[n, c], |_| r.random_range(-3.0..3.0));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    let w: Vec<f64> = (0..c).map(|_| r.random_range(0.2..3.0)).collect();
    let (_, g) = super::softmax_cross_entropy(&x, &labels, Some(&w)).expect("valid");
    check_arg(&g, &x, |v| {
        super::softmax_cross_entropy(&v, &labels, Some(&w)).expect("valid").0
    })
}

/// Random small shapes for every layer, derived from `seed`. Each entry is
/// the worst relative error over all input and parameter coordinates.
pub fn layer_suite(seed: u64) -> Vec<LayerCheck> {
    let (relu, drop) = activations(seed);
    vec![
        LayerCheck {
            layer: "dense",
            max_error: dense(seed),
        },
        LayerCheck {
            layer: "conv2d",
            max_error: conv(seed),
        },
        LayerCheck {
            layer: "maxpool2d",
            max_error: pool(seed),
        },
        LayerCheck {
            layer: "batchnorm",
            max_error: batchnorm(seed),
        },
        LayerCheck {
            layer: "bilstm",
            max_error: bilstm(seed),
        },
        LayerCheck {
            layer: "relu",
            max_error: relu,
        },
        LayerCheck {
            layer: "dropout",
            max_error: drop,
        },
        LayerCheck {
            layer: "softmax_cross_entropy",
            max_error: cross_entropy(seed),
        },
    ]
}
