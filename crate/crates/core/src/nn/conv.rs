use rayon::prelude::*;

use super::NnError;
use crate::tensor::{ordered_sum, Element, ShapeError, Tensor};

/// Parameter count of a square `k x k` convolution with bias.
pub fn conv2d_param_count(k: usize, c_in: usize, c_out: usize) -> usize {
    k * k * c_in * c_out + c_out
}

struct Dims {
    n: usize,
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
}

fn dims<T: Element>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Dims, ShapeError> {
    input.expect_rank(4)?;
    kernel.expect_rank(4)?;
    let (n, h, w, c_in) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kh, kw, kc, c_out) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kh != kw || kh % 2 == 0 {
        return Err(ShapeError::Invalid(format!(
            "kernel must be square with odd size, got {kh}x{kw}"
        )));
    }
    if kc != c_in {
        return Err(ShapeError::Mismatch {
            what: "conv2d input channels",
            expected: vec![kc],
            actual: vec![c_in],
        });
    }
    Ok(Dims {
        n,
        h,
        w,
        c_in,
        c_out,
        k: kh,
    })
}

/// Same-padded, stride-1 cross-correlation over `(N, H, W, Cin)` with a
/// `(k, k, Cin, Cout)` kernel. Samples are processed in parallel.
pub fn conv2d<T: Element>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let d = dims(input, kernel)?;
    bias.expect_shape("conv2d bias", &[d.c_out])?;
    let pad = d.k / 2;
    let in_stride = d.h * d.w * d.c_in;
    let out_stride = d.h * d.w * d.c_out;
    let mut out = vec![T::zero(); d.n * out_stride];
    let wk = kernel.data();
    let b = bias.data();
    out.par_chunks_mut(out_stride.max(1))
        .zip(input.data().par_chunks(in_stride.max(1)))
        .for_each(|(o, x)| {
            for y in 0..d.h {
                for xw in 0..d.w {
                    let acc = &mut o[(y * d.w + xw) * d.c_out..(y * d.w + xw + 1) * d.c_out];
                    acc.copy_from_slice(b);
                    for ky in 0..d.k {
                        let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < d.h) else {
                            continue;
                        };
                        for kx in 0..d.k {
                            let Some(ix) = (xw + kx).checked_sub(pad).filter(|&v| v < d.w) else {
                                continue;
                            };
                            let px = &x[(iy * d.w + ix) * d.c_in..(iy * d.w + ix + 1) * d.c_in];
                            let kbase = (ky * d.k + kx) * d.c_in * d.c_out;
                            for (ci, &v) in px.iter().enumerate() {
                                let row = &wk[kbase + ci * d.c_out..kbase + (ci + 1) * d.c_out];
                                for (a, &wv) in acc.iter_mut().zip(row) {
                                    *a = *a + v * wv;
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(Tensor::from_vec(&[d.n, d.h, d.w, d.c_out], out)?)
}

pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`]. Per-sample kernel gradients are summed in
/// sample order.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>, NnError> {
    let d = dims(input, kernel)?;
    grad_out.expect_shape("conv2d grad_out", &[d.n, d.h, d.w, d.c_out])?;
    let pad = d.k / 2;
    let in_stride = d.h * d.w * d.c_in;
    let out_stride = d.h * d.w * d.c_out;
    let wk = kernel.data();
    let parts: Vec<(Vec<T>, Tensor<T>, Tensor<T>)> = input
        .data()
        .par_chunks(in_stride.max(1))
        .zip(grad_out.data().par_chunks(out_stride.max(1)))
        .map(|(x, g)| {
            let mut dx = vec![T::zero(); in_stride];
            let mut dk = Tensor::zeros(kernel.shape());
            let mut db = Tensor::zeros(&[d.c_out]);
            let dkd = dk.data_mut();
            for y in 0..d.h {
                for xw in 0..d.w {
                    let go = &g[(y * d.w + xw) * d.c_out..(y * d.w + xw + 1) * d.c_out];
                    for (acc, &gv) in db.data_mut().iter_mut().zip(go) {
                        *acc = *acc + gv;
                    }
                    for ky in 0..d.k {
                        let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < d.h) else {
                            continue;
                        };
                        for kx in 0..d.k {
                            let Some(ix) = (xw + kx).checked_sub(pad).filter(|&v| v < d.w) else {
                                continue;
                            };
                            let pbase = (iy * d.w + ix) * d.c_in;
                            let kbase = (ky * d.k + kx) * d.c_in * d.c_out;
                            for ci in 0..d.c_in {
                                let v = x[pbase + ci];
                                let krow = kbase + ci * d.c_out;
                                let mut s = T::zero();
                                for co in 0..d.c_out {
                                    dkd[krow + co] = dkd[krow + co] + v * go[co];
                                    s = s + wk[krow + co] * go[co];
                                }
                                dx[pbase + ci] = dx[pbase + ci] + s;
                            }
                        }
                    }
                }
            }
            (dx, dk, db)
        })
        .collect();
    let mut dx = Vec::with_capacity(input.len());
    let mut dks = Vec::with_capacity(parts.len());
    let mut dbs = Vec::with_capacity(parts.len());
    for (x, k, b) in parts {
        dx.extend(x);
        dks.push(k);
        dbs.push(b);
    }
    Ok(Conv2dGrads {
        input: Tensor::from_vec(input.shape(), dx)?,
        kernel: ordered_sum(&dks).unwrap_or_else(|| Tensor::zeros(kernel.shape())),
        bias: ordered_sum(&dbs).unwrap_or_else(|| Tensor::zeros(&[d.c_out])),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Direct nested-loop convolution over explicit zero padding.
    fn reference(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let s = input.shape();
        let (n, h, w, ci) = (s[0], s[1], s[2], s[3]);
        let k = kernel.shape()[0];
        let co = kernel.shape()[3];
        let p = (k / 2) as isize;
        let at = |b: usize, y: isize, x: isize, c: usize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                input.data()[((b * h + y as usize) * w + x as usize) * ci + c]
            }
        };
        Tensor::from_fn(&[n, h, w, co], |idx| {
            let o = idx % co;
            let x = (idx / co) % w;
            let y = (idx / (co * w)) % h;
            let b = idx / (co * w * h);
            let mut acc = bias.data()[o];
            for ky in 0..k {
                for kx in 0..k {
                    for c in 0..ci {
                        let kv = kernel.data()[((ky * k + kx) * ci + c) * co + o];
                        acc += kv * at(b, y as isize + ky as isize - p, x as isize + kx as isize - p, c);
                    }
                }
            }
            acc
        })
    }

    fn rand_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut r = rng::stream(1, "t", 0);
        let x = rand_tensor(&[1, 5, 4, 1], &mut r);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data_mut()[4] = 1.0;
        let y = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_direct_reference_seed_11() {
        let mut r = rng::stream(11, "conv", 0);
        let x = rand_tensor(&[1, 4, 4, 2], &mut r);
        let k = rand_tensor(&[3, 3, 2, 3], &mut r);
        let b = rand_tensor(&[3], &mut r);
        let y = conv2d(&x, &k, &b).unwrap();
        assert!(y.max_abs_diff(&reference(&x, &k, &b)) < 1e-12);
    }

    #[test]
    fn kernel_five_matches_reference() {
        let mut r = rng::stream(5, "conv", 0);
        let x = rand_tensor(&[2, 6, 3, 2], &mut r);
        let k = rand_tensor(&[5, 5, 2, 2], &mut r);
        let b = rand_tensor(&[2], &mut r);
        let y = conv2d(&x, &k, &b).unwrap();
        assert!(y.max_abs_diff(&reference(&x, &k, &b)) < 1e-12);
    }

    #[test]
    fn first_layer_param_count() {
        assert_eq!(conv2d_param_count(3, 3, 32), 896);
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(matches!(
            conv2d(&x, &k, &Tensor::zeros(&[1])),
            Err(NnError::Shape(ShapeError::Mismatch { .. }))
        ));
    }
}
