//! Bidirectional LSTM with backpropagation through time.
//!
//! Gates are packed in the order input, forget, cell candidate, output
//! (`i, f, g, o`) along the `4U` axis of every weight.

use rayon::prelude::*;

use super::NnError;
use crate::tensor::{ordered_sum, Element, ShapeError, Tensor};

/// One direction: `4 * ((Din + U) * U + U)`.
pub fn lstm_param_count(d_in: usize, units: usize) -> usize {
    4 * ((d_in + units) * units + units)
}

pub fn bilstm_param_count(d_in: usize, units: usize) -> usize {
    2 * lstm_param_count(d_in, units)
}

/// Weights of one direction: `w_x (Din, 4U)`, `w_h (U, 4U)`, `bias (4U)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<T = f64> {
    pub w_x: Tensor<T>,
    pub w_h: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> LstmWeights<T> {
    pub fn zeros(d_in: usize, units: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[d_in, 4 * units]),
            w_h: Tensor::zeros(&[units, 4 * units]),
            bias: Tensor::zeros(&[4 * units]),
        }
    }

    pub fn units(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.w_x.shape()[0]
    }

    fn check(&self) -> Result<(usize, usize), ShapeError> {
        let u = self.units();
        let d = self.d_in();
        self.w_x.expect_shape("lstm w_x", &[d, 4 * u])?;
        self.w_h.expect_shape("lstm w_h", &[u, 4 * u])?;
        self.bias.expect_shape("lstm bias", &[4 * u])?;
        Ok((d, u))
    }
}

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Activations of one direction over one sample, indexed by input time.
#[derive(Clone, Debug)]
pub struct DirectionCache<T> {
    /// `(T, 4U)` post-activation gates.
    gates: Vec<T>,
    /// `(T, U)` cell states and their tanh.
    c: Vec<T>,
    tanh_c: Vec<T>,
    /// `(T, U)` hidden states.
    h: Vec<T>,
}

fn time_order(steps: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    }
}

fn direction_forward<T: Element>(x: &[T], steps: usize, w: &LstmWeights<T>, reverse: bool) -> DirectionCache<T> {
    let (d, u) = (w.d_in(), w.units());
    let mut cache = DirectionCache {
        gates: vec![T::zero(); steps * 4 * u],
        c: vec![T::zero(); steps * u],
        tanh_c: vec![T::zero(); steps * u],
        h: vec![T::zero(); steps * u],
    };
    let mut h_prev = vec![T::zero(); u];
    let mut c_prev = vec![T::zero(); u];
    let mut z = vec![T::zero(); 4 * u];
    let (wx, wh) = (w.w_x.data(), w.w_h.data());
    for t in time_order(steps, reverse) {
        z.copy_from_slice(w.bias.data());
        for (i, &xv) in x[t * d..(t + 1) * d].iter().enumerate() {
            for (a, &wv) in z.iter_mut().zip(&wx[i * 4 * u..(i + 1) * 4 * u]) {
                *a = *a + xv * wv;
            }
        }
        for (j, &hv) in h_prev.iter().enumerate() {
            for (a, &wv) in z.iter_mut().zip(&wh[j * 4 * u..(j + 1) * 4 * u]) {
                *a = *a + hv * wv;
            }
        }
        let g_row = &mut cache.gates[t * 4 * u..(t + 1) * 4 * u];
        for k in 0..u {
            let ig = sigmoid(z[k]);
            let fg = sigmoid(z[u + k]);
            let gg = z[2 * u + k].tanh();
            let og = sigmoid(z[3 * u + k]);
            g_row[k] = ig;
            g_row[u + k] = fg;
            g_row[2 * u + k] = gg;
            g_row[3 * u + k] = og;
            let c = fg * c_prev[k] + ig * gg;
            let tc = c.tanh();
            cache.c[t * u + k] = c;
            cache.tanh_c[t * u + k] = tc;
            cache.h[t * u + k] = og * tc;
        }
        h_prev.copy_from_slice(&cache.h[t * u..(t + 1) * u]);
        c_prev.copy_from_slice(&cache.c[t * u..(t + 1) * u]);
    }
    cache
}

struct DirectionGrads<T> {
    dx: Vec<T>,
    w: LstmWeights<T>,
}

/// BPTT for one direction. `dh` is `(T, U)`: the loss gradient with respect
/// to each emitted hidden state, indexed by input time.
fn direction_backward<T: Element>(
    x: &[T],
    steps: usize,
    w: &LstmWeights<T>,
    cache: &DirectionCache<T>,
    dh: &[T],
    reverse: bool,
) -> DirectionGrads<T> {
    let (d, u) = (w.d_in(), w.units());
    let mut grads = LstmWeights::zeros(d, u);
    let mut dx = vec![T::zero(); steps * d];
    let mut dh_next = vec![T::zero(); u];
    let mut dc_next = vec![T::zero(); u];
    let mut dz = vec![T::zero(); 4 * u];
    let (wx, wh) = (w.w_x.data(), w.w_h.data());
    let order: Vec<usize> = time_order(steps, reverse).collect();
    for (pos, &t) in order.iter().enumerate().rev() {
        let prev = if pos == 0 { None } else { Some(order[pos - 1]) };
        let g = &cache.gates[t * 4 * u..(t + 1) * 4 * u];
        for k in 0..u {
            let (ig, fg, gg, og) = (g[k], g[u + k], g[2 * u + k], g[3 * u + k]);
            let tc = cache.tanh_c[t * u + k];
            let c_prev = prev.map_or(T::zero(), |p| cache.c[p * u + k]);
            let dh_t = dh[t * u + k] + dh_next[k];
            let d_o = dh_t * tc;
            let dc = dc_next[k] + dh_t * og * (T::one() - tc * tc);
            let di = dc * gg;
            let dg = dc * ig;
            let df = dc * c_prev;
            dc_next[k] = dc * fg;
            dz[k] = di * ig * (T::one() - ig);
            dz[u + k] = df * fg * (T::one() - fg);
            dz[2 * u + k] = dg * (T::one() - gg * gg);
            dz[3 * u + k] = d_o * og * (T::one() - og);
        }
        for (a, &v) in grads.bias.data_mut().iter_mut().zip(&dz) {
            *a = *a + v;
        }
        let xt = &x[t * d..(t + 1) * d];
        let dwx = grads.w_x.data_mut();
        for i in 0..d {
            let row = &mut dwx[i * 4 * u..(i + 1) * 4 * u];
            let wrow = &wx[i * 4 * u..(i + 1) * 4 * u];
            let mut s = T::zero();
            for j in 0..4 * u {
                row[j] = row[j] + xt[i] * dz[j];
                s = s + wrow[j] * dz[j];
            }
            dx[t * d + i] = s;
        }
        let dwh = grads.w_h.data_mut();
        for j in 0..u {
            let hp = prev.map_or(T::zero(), |p| cache.h[p * u + j]);
            let row = &mut dwh[j * 4 * u..(j + 1) * 4 * u];
            let wrow = &wh[j * 4 * u..(j + 1) * 4 * u];
            let mut s = T::zero();
            for m in 0..4 * u {
                row[m] = row[m] + hp * dz[m];
                s = s + wrow[m] * dz[m];
            }
            dh_next[j] = s;
        }
    }
    DirectionGrads { dx, w: grads }
}

/// Per-sample caches of both directions.
pub struct BiLstmCache<T> {
    forward: Vec<DirectionCache<T>>,
    backward: Vec<DirectionCache<T>>,
}

/// `(N, T, Din)` to `(N, T, 2U)` when `return_sequences`, else `(N, 2U)`.
/// The last-step output joins the forward state after the final frame with
/// the backward state after the first frame.
pub fn bilstm<T: Element>(
    input: &Tensor<T>,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
    return_sequences: bool,
) -> Result<(Tensor<T>, BiLstmCache<T>), NnError> {
    input.expect_rank(3)?;
    let (n, steps, d) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (fd, u) = fwd.check()?;
    let (bd, bu) = bwd.check()?;
    if fd != d || bd != d || bu != u {
        return Err(ShapeError::Mismatch {
            what: "bilstm input width",
            expected: vec![fd],
            actual: vec![d],
        }
        .into());
    }
    if steps == 0 {
        return Err(NnError::Empty("bilstm over zero time steps"));
    }
    let per: Vec<(DirectionCache<T>, DirectionCache<T>)> = input
        .data()
        .par_chunks(steps * d)
        .map(|x| {
            (
                direction_forward(x, steps, fwd, false),
                direction_forward(x, steps, bwd, true),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(n * if return_sequences { steps * 2 * u } else { 2 * u });
    for (f, b) in &per {
        if return_sequences {
            for t in 0..steps {
                out.extend_from_slice(&f.h[t * u..(t + 1) * u]);
                out.extend_from_slice(&b.h[t * u..(t + 1) * u]);
            }
        } else {
            out.extend_from_slice(&f.h[(steps - 1) * u..steps * u]);
            out.extend_from_slice(&b.h[0..u]);
        }
    }
    let shape: Vec<usize> = if return_sequences {
        vec![n, steps, 2 * u]
    } else {
        vec![n, 2 * u]
    };
    let (forward, backward) = per.into_iter().unzip();
    Ok((Tensor::from_vec(&shape, out)?, BiLstmCache { forward, backward }))
}

pub struct BiLstmGrads<T> {
    pub input: Tensor<T>,
    pub fwd: LstmWeights<T>,
    pub bwd: LstmWeights<T>,
}

fn sum_weights<T: Element>(parts: &[LstmWeights<T>], d: usize, u: usize) -> LstmWeights<T> {
    if parts.is_empty() {
        return LstmWeights::zeros(d, u);
    }
    let collect = |f: fn(&LstmWeights<T>) -> &Tensor<T>| {
        ordered_sum(&parts.iter().map(|p| f(p).clone()).collect::<Vec<_>>()).expect("non-empty")
    };
    LstmWeights {
        w_x: collect(|p| &p.w_x),
        w_h: collect(|p| &p.w_h),
        bias: collect(|p| &p.bias),
    }
}

pub fn bilstm_backward<T: Element>(
    input: &Tensor<T>,
    cache: &BiLstmCache<T>,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
    grad_out: &Tensor<T>,
    return_sequences: bool,
) -> Result<BiLstmGrads<T>, NnError> {
    input.expect_rank(3)?;
    let (n, steps, d) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let u = fwd.units();
    if return_sequences {
        grad_out.expect_shape("bilstm grad_out", &[n, steps, 2 * u])?;
    } else {
        grad_out.expect_shape("bilstm grad_out", &[n, 2 * u])?;
    }
    let g_stride = grad_out.len() / n.max(1);
    let per: Vec<(Vec<T>, LstmWeights<T>, LstmWeights<T>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let x = &input.data()[s * steps * d..(s + 1) * steps * d];
            let g = &grad_out.data()[s * g_stride..(s + 1) * g_stride];
            let mut dh_f = vec![T::zero(); steps * u];
            let mut dh_b = vec![T::zero(); steps * u];
            if return_sequences {
                for t in 0..steps {
                    dh_f[t * u..(t + 1) * u].copy_from_slice(&g[t * 2 * u..t * 2 * u + u]);
                    dh_b[t * u..(t + 1) * u].copy_from_slice(&g[t * 2 * u + u..(t + 1) * 2 * u]);
                }
            } else {
                dh_f[(steps - 1) * u..].copy_from_slice(&g[..u]);
                dh_b[..u].copy_from_slice(&g[u..]);
            }
            let gf = direction_backward(x, steps, fwd, &cache.forward[s], &dh_f, false);
            let gb = direction_backward(x, steps, bwd, &cache.backward[s], &dh_b, true);
            let dx = gf.dx.iter().zip(&gb.dx).map(|(&a, &b)| a + b).collect();
            (dx, gf.w, gb.w)
        })
        .collect();
    let mut dx = Vec::with_capacity(input.len());
    let mut fw = Vec::with_capacity(n);
    let mut bw = Vec::with_capacity(n);
    for (x, f, b) in per {
        dx.extend(x);
        fw.push(f);
        bw.push(b);
    }
    Ok(BiLstmGrads {
        input: Tensor::from_vec(input.shape(), dx)?,
        fwd: sum_weights(&fw, d, u),
        bwd: sum_weights(&bw, d, u),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(bilstm_param_count(512, 256), 1_574_912);
        assert_eq!(bilstm_param_count(273, 256), 1_085_440);
    }

    #[test]
    fn no_integer_width_gives_the_listed_first_layer_count() {
        // 1,082,368 / 2 is not a multiple of 4 * 256 after removing the
        // recurrent and bias terms.
        assert!((1..2000).all(|d| bilstm_param_count(d, 256) != 1_082_368));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 3], |i| i as f64 * 0.1);
        let w = LstmWeights::zeros(3, 5);
        let (y, _) = bilstm(&x, &w, &w, true).unwrap();
        assert_eq!(y.shape(), &[2, 4, 10]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        let (y, _) = bilstm(&x, &w, &w, false).unwrap();
        assert_eq!(y.shape(), &[2, 10]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_scalar_gates() {
        // Din = U = 1, one step, h0 = c0 = 0, x = 1.
        // z = w_x + b per gate: i: 0.5, f: -0.3, g: 0.8, o: 1.2
        let w = LstmWeights {
            w_x: Tensor::from_vec(&[1, 4], vec![0.4, -0.5, 0.6, 1.0]).unwrap(),
            w_h: Tensor::from_vec(&[1, 4], vec![9.0, 9.0, 9.0, 9.0]).unwrap(),
            bias: Tensor::from_vec(&[4], vec![0.1, 0.2, 0.2, 0.2]).unwrap(),
        };
        let x = Tensor::<f64>::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let (y, _) = bilstm(&x, &w, &w, false).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let c1 = s(0.5) * 0.8f64.tanh();
        let h1 = s(1.2) * c1.tanh();
        assert!((y.data()[0] - h1).abs() < 1e-15);
        assert!((y.data()[1] - h1).abs() < 1e-15);
    }

    #[test]
    fn last_step_joins_both_ends() {
        let mut w = LstmWeights::<f64>::zeros(2, 3);
        w.w_x = Tensor::from_fn(&[2, 12], |i| ((i * 7) % 5) as f64 * 0.1 - 0.2);
        w.w_h = Tensor::from_fn(&[3, 12], |i| ((i * 3) % 7) as f64 * 0.05 - 0.1);
        let x = Tensor::<f64>::from_fn(&[1, 5, 2], |i| (i as f64 * 0.7).sin());
        let (seq, _) = bilstm(&x, &w, &w, true).unwrap();
        let (last, _) = bilstm(&x, &w, &w, false).unwrap();
        assert_eq!(&last.data()[..3], &seq.data()[4 * 6..4 * 6 + 3]);
        assert_eq!(&last.data()[3..], &seq.data()[3..6]);
    }
}
