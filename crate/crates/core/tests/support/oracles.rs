//! Brute-force nested-loop references for the layer kernels, and sweeps
//! that compare the library against them on random small shapes.

use rand::Rng;
use signkit::nn;
use signkit::{rng, Tensor};

pub fn rand_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-2.0..2.0))
}

fn idx4(s: &[usize], a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * s[1] + b) * s[2] + c) * s[3] + d
}

pub fn conv_reference(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    let ks = k.shape().to_vec();
    let (kk, co) = (ks[0], ks[3]);
    let pad = (kk / 2) as i64;
    let mut out = Tensor::zeros(&[s[0], s[1], s[2], co]);
    let os = out.shape().to_vec();
    for n in 0..s[0] {
        for y in 0..s[1] {
            for x_ in 0..s[2] {
                for o in 0..co {
                    let mut acc = b.data()[o];
                    for dy in 0..kk {
                        for dx in 0..kk {
                            let iy = y as i64 + dy as i64 - pad;
                            let ix = x_ as i64 + dx as i64 - pad;
                            if iy < 0 || ix < 0 || iy >= s[1] as i64 || ix >= s[2] as i64 {
                                continue;
                            }
                            for c in 0..s[3] {
                                acc += x.data()[idx4(&s, n, iy as usize, ix as usize, c)]
                                    * k.data()[idx4(&ks, dy, dx, c, o)];
                            }
                        }
                    }
                    out.data_mut()[idx4(&os, n, y, x_, o)] = acc;
                }
            }
        }
    }
    out
}

pub fn pool_reference(x: &Tensor, ph: usize, pw: usize) -> Tensor {
    let s = x.shape().to_vec();
    let (oh, ow) = (s[1] / ph, s[2] / pw);
    let mut out = Tensor::zeros(&[s[0], oh, ow, s[3]]);
    let os = out.shape().to_vec();
    for n in 0..s[0] {
        for y in 0..oh {
            for x_ in 0..ow {
                for c in 0..s[3] {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            m = m.max(x.data()[idx4(&s, n, y * ph + dy, x_ * pw + dx, c)]);
                        }
                    }
                    out.data_mut()[idx4(&os, n, y, x_, c)] = m;
                }
            }
        }
    }
    out
}

/// Two-pass mean and biased variance per channel.
pub fn bn_reference(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let c = *x.shape().last().unwrap();
    let m = x.len() / c;
    let mut out = x.clone();
    for ch in 0..c {
        let vals: Vec<f64> = (0..m).map(|i| x.data()[i * c + ch]).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        for (i, v) in vals.iter().enumerate() {
            out.data_mut()[i * c + ch] = gamma[ch] * (v - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    out
}

pub fn dense_reference(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, di) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    Tensor::from_fn(&[n, dout], |i| {
        let (row, col) = (i / dout, i % dout);
        b.data()[col]
            + (0..di)
                .map(|k| x.data()[row * di + k] * w.data()[k * dout + col])
                .sum::<f64>()
    })
}

/// Worst absolute difference of `conv2d` over `cases` random shapes.
pub fn conv2d_sweep(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut r = rng::stream(case, "oracle-conv", 0);
        let k = [1, 3, 5][r.random_range(0..3)];
        let s = [
            r.random_range(1..4),
            r.random_range(1..8),
            r.random_range(1..8),
            r.random_range(1..5),
        ];
        let co = r.random_range(1..5);
        let x = rand_tensor(&s, &mut r);
        let w = rand_tensor(&[k, k, s[3], co], &mut r);
        let b = rand_tensor(&[co], &mut r);
        worst = worst.max(
            nn::conv2d(&x, &w, &b)
                .unwrap()
                .max_abs_diff(&conv_reference(&x, &w, &b)),
        );
    }
    worst
}

/// Worst absolute difference of `maxpool2d`, and whether every recorded
/// argmax points at its selected value.
pub fn maxpool_sweep(cases: u64) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut argmax_ok = true;
    for case in 0..cases {
        let mut r = rng::stream(case, "oracle-pool", 0);
        let (ph, pw) = (r.random_range(1..4), r.random_range(1..4));
        let s = [
            r.random_range(1..4),
            r.random_range(ph..9),
            r.random_range(pw..9),
            r.random_range(1..4),
        ];
        let x = rand_tensor(&s, &mut r);
        let got = nn::maxpool2d(&x, (ph, pw)).unwrap();
        worst = worst.max(got.output.max_abs_diff(&pool_reference(&x, ph, pw)));
        argmax_ok &= got
            .argmax
            .iter()
            .zip(got.output.data())
            .all(|(&i, &v)| x.data()[i] == v);
    }
    (worst, argmax_ok)
}

pub fn batchnorm_sweep(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut r = rng::stream(case, "oracle-bn", 0);
        let s = [
            r.random_range(1..5),
            r.random_range(1..5),
            r.random_range(1..5),
            r.random_range(1..5),
        ];
        let x = rand_tensor(&s, &mut r);
        let gamma = rand_tensor(&[s[3]], &mut r);
        let beta = rand_tensor(&[s[3]], &mut r);
        let (y, _) = nn::batchnorm_train(&x, &gamma, &beta, 1e-5).unwrap();
        worst = worst.max(y.max_abs_diff(&bn_reference(&x, gamma.data(), beta.data(), 1e-5)));
    }
    worst
}

pub fn dense_sweep(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut r = rng::stream(case, "oracle-dense", 0);
        let (n, di, dout) = (r.random_range(1..6), r.random_range(1..12), r.random_range(1..8));
        let x = rand_tensor(&[n, di], &mut r);
        let w = rand_tensor(&[di, dout], &mut r);
        let b = rand_tensor(&[dout], &mut r);
        worst = worst.max(
            nn::dense(&x, &w, &b)
                .unwrap()
                .max_abs_diff(&dense_reference(&x, &w, &b)),
        );
    }
    worst
}
