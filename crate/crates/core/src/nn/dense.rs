use super::NnError;
use crate::tensor::{Element, ShapeError, Tensor};

pub fn dense_param_count(d_in: usize, d_out: usize) -> usize {
    d_in * d_out + d_out
}

fn check<T: Element>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize), ShapeError> {
    input.expect_rank(2)?;
    weights.expect_rank(2)?;
    let (n, d_in) = (input.shape()[0], input.shape()[1]);
    if weights.shape()[0] != d_in {
        return Err(ShapeError::Mismatch {
            what: "dense input width",
            expected: vec![weights.shape()[0]],
            actual: vec![d_in],
        });
    }
    Ok((n, d_in, weights.shape()[1]))
}

/// `(N, Din) x (Din, Dout) + bias`. Rows are computed independently.
pub fn dense<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, d_in, d_out) = check(input, weights)?;
    bias.expect_shape("dense bias", &[d_out])?;
    let w = weights.data();
    let mut out = Vec::with_capacity(n * d_out);
    for row in input.data().chunks_exact(d_in.max(1)).take(n) {
        let start = out.len();
        out.extend_from_slice(bias.data());
        let acc = &mut out[start..];
        for (i, &x) in row.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&w[i * d_out..(i + 1) * d_out]) {
                *a = *a + x * wv;
            }
        }
    }
    Ok(Tensor::from_vec(&[n, d_out], out)?)
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>, NnError> {
    let (n, d_in, d_out) = check(input, weights)?;
    grad_out.expect_shape("dense grad_out", &[n, d_out])?;
    let w = weights.data();
    let mut dw = vec![T::zero(); d_in * d_out];
    let mut db = vec![T::zero(); d_out];
    let mut dx = Vec::with_capacity(n * d_in);
    for r in 0..n {
        let x = &input.data()[r * d_in..(r + 1) * d_in];
        let g = &grad_out.data()[r * d_out..(r + 1) * d_out];
        for (acc, &gv) in db.iter_mut().zip(g) {
            *acc = *acc + gv;
        }
        for i in 0..d_in {
            let wrow = &w[i * d_out..(i + 1) * d_out];
            let dwrow = &mut dw[i * d_out..(i + 1) * d_out];
            let mut s = T::zero();
            for j in 0..d_out {
                dwrow[j] = dwrow[j] + x[i] * g[j];
                s = s + wrow[j] * g[j];
            }
            dx.push(s);
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_vec(&[n, d_in], dx)?,
        weights: Tensor::from_vec(&[d_in, d_out], dw)?,
        bias: Tensor::from_vec(&[d_out], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_param_count() {
        assert_eq!(dense_param_count(512, 20), 10_260);
    }

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn two_by_three_by_hand() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let w = Tensor::from_vec(&[3, 2], vec![1.0, -1.0, 0.5, 2.0, -2.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.25, -0.25]).unwrap();
        let y = dense(&x, &w, &b).unwrap();
        // row 0: [1+1-6, -1+4+3] + b ; row 1: [-1+0.25-4, 1+1+2] + b
        assert_eq!(y.data(), &[-3.75, 5.75, -4.5, 3.75]);
    }

    #[test]
    fn width_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 2]);
        assert!(matches!(dense(&x, &w, &Tensor::zeros(&[2])), Err(NnError::Shape(_))));
    }
}
