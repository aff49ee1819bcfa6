use super::NnError;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Gamma, beta, running mean and running variance.
pub fn batchnorm_param_count(channels: usize) -> usize {
    4 * channels
}

/// Values kept from the training-mode forward pass for the backward pass.
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn channels<T: Element>(input: &Tensor<T>) -> Result<(usize, usize), NnError> {
    let c = *input
        .shape()
        .last()
        .ok_or(NnError::Empty("batchnorm input has no channel axis"))?;
    if c == 0 || input.is_empty() {
        return Err(NnError::Empty("batchnorm over an empty batch"));
    }
    Ok((c, input.len() / c))
}

/// Normalizes the last (channel) axis with statistics over all other axes.
/// Variance is the biased (population) estimate.
pub fn batchnorm_train<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>), NnError> {
    let (c, m) = channels(input)?;
    gamma.expect_shape("batchnorm gamma", &[c])?;
    beta.expect_shape("batchnorm beta", &[c])?;
    let x = input.data();
    let inv_m = T::one() / T::c(m as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.chunks_exact(c) {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    mean.iter_mut().for_each(|v| *v = *v * inv_m);
    let mut var = vec![T::zero(); c];
    for row in x.chunks_exact(c) {
        for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *acc = *acc + d * d;
        }
    }
    var.iter_mut().for_each(|v| *v = *v * inv_m);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::c(eps)).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    let (g, b) = (gamma.data(), beta.data());
    for row in x.chunks_exact(c) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(xh);
            out.push(g[ch] * xh + b[ch]);
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BatchNormCache {
            xhat: Tensor::from_vec(input.shape(), xhat)?,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Inference mode: normalizes with the running statistics. Every element is
/// independent of the rest of the batch.
pub fn batchnorm_infer<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>, NnError> {
    let (c, _) = channels(input)?;
    for (what, t) in [
        ("batchnorm gamma", gamma),
        ("batchnorm beta", beta),
        ("batchnorm running mean", running_mean),
        ("batchnorm running var", running_var),
    ] {
        t.expect_shape(what, &[c])?;
    }
    let scale: Vec<T> = gamma
        .data()
        .iter()
        .zip(running_var.data())
        .map(|(&g, &v)| g / (v + T::c(eps)).sqrt())
        .collect();
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks_exact(c) {
        for ch in 0..c {
            out.push((row[ch] - running_mean.data()[ch]) * scale[ch] + beta.data()[ch]);
        }
    }
    Ok(Tensor::from_vec(input.shape(), out)?)
}

/// `running <- momentum * running + (1 - momentum) * batch`.
pub fn update_running<T: Element>(running: &mut Tensor<T>, batch: &[T], momentum: f64) {
    let m = T::c(momentum);
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = m * *r + (T::one() - m) * b;
    }
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Element>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>, NnError> {
    grad_out.expect_shape("batchnorm grad_out", cache.xhat.shape())?;
    let c = cache.inv_std.len();
    let m = grad_out.len() / c;
    let inv_m = T::one() / T::c(m as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g_row, xh_row) in grad_out.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] = dbeta[ch] + g_row[ch];
            dgamma[ch] = dgamma[ch] + g_row[ch] * xh_row[ch];
        }
    }
    let mut dx = Vec::with_capacity(grad_out.len());
    for (g_row, xh_row) in grad_out.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for ch in 0..c {
            let k = gamma.data()[ch] * cache.inv_std[ch];
            dx.push(k * (g_row[ch] - dbeta[ch] * inv_m - xh_row[ch] * dgamma[ch] * inv_m));
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::from_vec(grad_out.shape(), dx)?,
        gamma: Tensor::from_vec(&[c], dgamma)?,
        beta: Tensor::from_vec(&[c], dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn param_count_first_block() {
        assert_eq!(batchnorm_param_count(32), 128);
    }

    #[test]
    fn standardized_input_is_unchanged() {
        // Per channel: values {-1, 1} have mean 0 and variance 1.
        let x = Tensor::<f64>::from_vec(&[2, 1, 1, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let (y, cache) = batchnorm_train(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), DEFAULT_EPS).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
        assert_eq!(cache.batch_mean, vec![0.0, 0.0]);
        assert_eq!(cache.batch_var, vec![1.0, 1.0]);
    }

    #[test]
    fn empty_batch() {
        let x = Tensor::<f64>::zeros(&[0, 3]);
        assert!(matches!(
            batchnorm_train(&x, &Tensor::zeros(&[3]), &Tensor::zeros(&[3]), 1e-5),
            Err(NnError::Empty(_))
        ));
    }

    #[test]
    fn running_update() {
        let mut r = Tensor::<f64>::full(&[2], 1.0);
        update_running(&mut r, &[0.0, 2.0], 0.9);
        assert!((r.data()[0] - 0.9).abs() < 1e-15);
        assert!((r.data()[1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn infer_uses_running_stats() {
        let mut g = rng::stream(2, "bn", 0);
        let x = Tensor::<f64>::from_fn(&[3, 4], |_| g.random_range(-2.0..2.0));
        let y = batchnorm_infer(
            &x,
            &Tensor::full(&[4], 2.0),
            &Tensor::full(&[4], 0.5),
            &Tensor::full(&[4], 1.0),
            &Tensor::full(&[4], 4.0),
            0.0,
        )
        .unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!(((a - 1.0) / 2.0 * 2.0 + 0.5 - b).abs() < 1e-15);
        }
    }
}
