use super::NnError;
use crate::tensor::{Element, ShapeError, Tensor};

/// Output of [`maxpool2d`]: pooled values and, per output element, the flat
/// input index that won its window.
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Output extent of non-overlapping pooling: floor division, so a trailing
/// odd row or column is dropped (30 -> 15 -> 7 -> 3 -> 1).
pub fn pooled_extent(len: usize, pool: usize) -> usize {
    len / pool
}

/// Max pooling over the H and W axes of `(N, H, W, C)` with window and
/// stride `pool`. Ties go to the first element in row-major scan order.
pub fn maxpool2d<T: Element>(input: &Tensor<T>, pool: (usize, usize)) -> Result<Pooled<T>, NnError> {
    input.expect_rank(4)?;
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 {
        return Err(ShapeError::Invalid("pool size must be positive".into()).into());
    }
    let s = input.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (pooled_extent(h, ph), pooled_extent(w, pw));
    if oh == 0 || ow == 0 {
        return Err(ShapeError::Invalid(format!("pooling {h}x{w} by {ph}x{pw} leaves an empty output")).into());
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + oy * ph) * w + ox * pw) * c + ch;
                    let mut best = x[best_idx];
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let idx = ((b * h + oy * ph + dy) * w + ox * pw + dx) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[n, oh, ow, c], out)?,
        argmax,
    })
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool2d_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if argmax.len() != grad_out.len() {
        return Err(ShapeError::Invalid("argmax and grad_out differ in length".into()).into());
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] = d[i] + g;
    }
    Ok(dx)
}

/// Smallest gap between a window's maximum and its runner-up. Finite
/// differences are only valid when this exceeds the probe step.
pub fn min_window_margin<T: Element>(input: &Tensor<T>, pool: (usize, usize)) -> f64 {
    let s = input.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (ph, pw) = pool;
    let x = input.data();
    let mut margin = f64::INFINITY;
    for b in 0..n {
        for oy in 0..pooled_extent(h, ph) {
            for ox in 0..pooled_extent(w, pw) {
                for ch in 0..c {
                    let mut vals: Vec<f64> = Vec::with_capacity(ph * pw);
                    for dy in 0..ph {
                        for dx in 0..pw {
                            vals.push(x[((b * h + oy * ph + dy) * w + ox * pw + dx) * c + ch].as_f64());
                        }
                    }
                    if vals.len() > 1 {
                        vals.sort_by(|a, b| b.total_cmp(a));
                        margin = margin.min(vals[0] - vals[1]);
                    }
                }
            }
        }
    }
    margin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_chains() {
        let mut w = 522;
        let mut widths = vec![];
        let mut t = 30;
        let mut times = vec![];
        for _ in 0..4 {
            w = pooled_extent(w, 2);
            t = pooled_extent(t, 2);
            widths.push(w);
            times.push(t);
        }
        assert_eq!(widths, vec![261, 130, 65, 32]);
        assert_eq!(times, vec![15, 7, 3, 1]);
    }

    #[test]
    fn block_matrix_maxima() {
        #[rustfmt::skip]
        let x = Tensor::<f64>::from_vec(&[1, 4, 4, 1], vec![
            1.0, 5.0,  2.0, 0.0,
            3.0, 4.0, -1.0, 7.0,
            9.0, 8.0,  6.0, 6.5,
            0.5, 2.0,  6.5, 1.0,
        ]).unwrap();
        let p = maxpool2d(&x, (2, 2)).unwrap();
        assert_eq!(p.output.data(), &[5.0, 7.0, 9.0, 6.5]);
        assert_eq!(p.argmax, vec![1, 7, 8, 11]);
    }

    #[test]
    fn odd_edges_truncate() {
        let x = Tensor::<f64>::from_fn(&[1, 5, 3, 2], |i| i as f64);
        let p = maxpool2d(&x, (2, 2)).unwrap();
        assert_eq!(p.output.shape(), &[1, 2, 1, 2]);
        let p = maxpool2d(&x, (1, 2)).unwrap();
        assert_eq!(p.output.shape(), &[1, 5, 1, 2]);
        assert!(maxpool2d(&Tensor::<f64>::zeros(&[1, 1, 1, 1]), (2, 2)).is_err());
    }

    #[test]
    fn constant_input_routes_to_first() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 1], 3.0);
        let p = maxpool2d(&x, (2, 2)).unwrap();
        assert_eq!(p.output.data(), &[3.0, 3.0]);
        let g = Tensor::full(&[1, 1, 2, 1], 1.0);
        let dx = maxpool2d_backward(x.shape(), &p.argmax, &g).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
