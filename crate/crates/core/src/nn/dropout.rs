use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; the
/// returned mask holds that per-element multiplier. Inference mode, or a
/// zero rate, is the identity and returns no mask.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> (Tensor<T>, Option<Vec<T>>) {
    if !training || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    (y, Some(mask))
}

pub fn dropout_backward<T: Scalar>(dy: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let mut dx = dy.clone();
            for (v, &k) in dx.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
            dx
        }
    }
}
