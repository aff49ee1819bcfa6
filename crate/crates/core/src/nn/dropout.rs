use rand::Rng;

use super::NnError;
use crate::tensor::{Element, Tensor};

/// Inverted dropout. Returns the output and the keep mask; kept elements are
/// scaled by `1 / (1 - rate)` so inference needs no rescaling.
pub fn dropout<T: Element, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<bool>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok((input.clone(), vec![true; input.len()]));
    }
    let scale = T::c(1.0 / (1.0 - rate));
    let mask: Vec<bool> = (0..input.len()).map(|_| rng.random::<f64>() >= rate).collect();
    let out = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
        .collect();
    Ok((Tensor::from_vec(input.shape(), out)?, mask))
}

pub fn dropout_backward<T: Element>(mask: &[bool], rate: f64, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if mask.len() != grad_out.len() {
        return Err(NnError::Config("dropout mask and gradient differ in length".into()));
    }
    let scale = T::c(1.0 / (1.0 - rate));
    let d = grad_out
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &keep)| if keep { g * scale } else { T::zero() })
        .collect();
    Ok(Tensor::from_vec(grad_out.shape(), d)?)
}
