use super::NnError;
use crate::tensor::{Element, ShapeError, Tensor};

/// Row-wise softmax of `(N, C)` logits, shifted by the row maximum.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    logits.expect_rank(2)?;
    let c = logits.shape()[1];
    if c == 0 {
        return Err(NnError::Empty("softmax over zero classes"));
    }
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - m).exp();
            z = z + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e = *e / z);
    }
    Ok(Tensor::from_vec(logits.shape(), out)?)
}

/// Class-weighted cross-entropy on logits, averaged over the batch size:
/// `sum_i w[y_i] * -log p_i[y_i] / N`. Returns the loss and its gradient
/// with respect to the logits. `weights` of `None` means all ones.
pub fn softmax_cross_entropy(
    logits: &Tensor<f64>,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Tensor<f64>), NnError> {
    let probs = softmax(logits)?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(ShapeError::Mismatch {
            what: "labels per batch",
            expected: vec![n],
            actual: vec![labels.len()],
        }
        .into());
    }
    if n == 0 {
        return Err(NnError::Empty("loss over an empty batch"));
    }
    if let Some(w) = weights {
        if w.len() != c {
            return Err(ShapeError::Mismatch {
                what: "class weights",
                expected: vec![c],
                actual: vec![w.len()],
            }
            .into());
        }
    }
    let mut loss = 0.0;
    let mut grad = probs.into_data();
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(NnError::Config(format!("label {y} out of range for {c} classes")));
        }
        let w = weights.map_or(1.0, |w| w[y]);
        let row = &mut grad[i * c..(i + 1) * c];
        // Clamp keeps the loss finite when a probability underflows.
        loss += -w * row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= w * inv_n);
    }
    Ok((loss * inv_n, Tensor::from_vec(&[n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_relative_error, numeric_gradient};
    use crate::rng;
    use rand::Rng;

    #[test]
    fn rows_sum_to_one() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax(&x).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(p.is_finite());
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let x = Tensor::<f64>::zeros(&[3, 5]);
        let (l, _) = softmax_cross_entropy(&x, &[0, 1, 4], None).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::stream(3, "loss", 0);
        let x = Tensor::<f64>::from_fn(&[4, 5], |_| r.random_range(-2.0..2.0));
        let labels = [0, 3, 3, 1];
        let w = [0.5, 2.0, 1.0, 1.5, 3.0];
        let (_, g) = softmax_cross_entropy(&x, &labels, Some(&w)).unwrap();
        let num = numeric_gradient(
            |v| {
                let t = Tensor::from_vec(&[4, 5], v.to_vec()).unwrap();
                softmax_cross_entropy(&t, &labels, Some(&w)).unwrap().0
            },
            x.data(),
            1e-5,
        );
        assert!(max_relative_error(g.data(), &num, 1e-8) < 1e-6);
    }

    #[test]
    fn weights_scale_the_loss() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![0.3, -0.1]).unwrap();
        let (a, _) = softmax_cross_entropy(&x, &[1], None).unwrap();
        let (b, _) = softmax_cross_entropy(&x, &[1], Some(&[1.0, 2.5])).unwrap();
        assert!((b - 2.5 * a).abs() < 1e-15);
    }
}
