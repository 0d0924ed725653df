use crate::error::{shape_err, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// `x (N, in) * w (in, out) + b`, without activation.
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return shape_err(format!("dense layer cannot multiply {xs:?} by {ws:?}"));
    }
    let (n, out) = (xs[0], ws[1]);
    if bias.shape() != [out] {
        return shape_err(format!(
            "dense bias must be ({out}), got {:?}",
            bias.shape()
        ));
    }
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(bias.data());
    }
    gemm(
        MatRef::new(x.data(), n, xs[1]),
        MatRef::new(weight.data(), ws[0], out),
        T::one(),
        &mut y,
    );
    Tensor::from_vec(&[n, out], y)
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, fan_in) = (x.shape()[0], x.shape()[1]);
    let out = weight.shape()[1];
    if dy.shape() != [n, out] {
        return shape_err(format!(
            "dense upstream gradient has shape {:?}",
            dy.shape()
        ));
    }
    let mut dw = vec![T::zero(); fan_in * out];
    gemm(
        MatRef::new(x.data(), n, fan_in).t(),
        MatRef::new(dy.data(), n, out),
        T::zero(),
        &mut dw,
    );
    let mut dx = vec![T::zero(); n * fan_in];
    gemm(
        MatRef::new(dy.data(), n, out),
        MatRef::new(weight.data(), fan_in, out).t(),
        T::zero(),
        &mut dx,
    );
    let mut db = vec![T::zero(); out];
    for row in dy.data().chunks(out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: Tensor::from_vec(&[out], db)?,
    })
}
