use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient through ReLU given its output: passes where `out > 0`.
pub fn relu_backward<T: Scalar>(dy: &Tensor<T>, out: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &o) in dx.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return shape_err(format!(
            "softmax expects (N, classes), got {:?}",
            logits.shape()
        ));
    }
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: `p * (g - sum(p * g))` per row.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_probs: &Tensor<T>) -> Result<Tensor<T>> {
    if probs.shape() != grad_probs.shape() || probs.rank() != 2 {
        return shape_err("softmax gradient shape mismatch");
    }
    let k = probs.shape()[1];
    let mut out = grad_probs.clone();
    for (g, p) in out.data_mut().chunks_mut(k).zip(probs.data().chunks(k)) {
        let dot: T = g.iter().zip(p).map(|(&a, &b)| a * b).sum();
        for (gi, &pi) in g.iter_mut().zip(p) {
            *gi = pi * (*gi - dot);
        }
    }
    Ok(out)
}
