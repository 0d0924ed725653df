//! Per-channel batch normalization over `(N, C, H, W)` or `(N, C)` inputs.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

struct Layout {
    batch: usize,
    channels: usize,
    spatial: usize,
}

fn layout(shape: &[usize], channels: usize) -> Result<Layout> {
    let (batch, c, spatial) = match shape.len() {
        2 => (shape[0], shape[1], 1),
        4 => (shape[0], shape[1], shape[2] * shape[3]),
        _ => {
            return shape_err(format!(
                "batch norm input must be rank 2 or 4, got {shape:?}"
            ))
        }
    };
    if c != channels {
        return shape_err(format!(
            "batch norm over {channels} channels fed {c} channels"
        ));
    }
    Ok(Layout {
        batch,
        channels,
        spatial,
    })
}

fn for_channel<T: Copy>(data: &[T], l: &Layout, c: usize, mut f: impl FnMut(T)) {
    for n in 0..l.batch {
        for &v in &data[(n * l.channels + c) * l.spatial..][..l.spatial] {
            f(v);
        }
    }
}

/// Training mode: normalizes with the biased batch statistics.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let l = layout(x.shape(), gamma.len())?;
    let count = T::from_f64((l.batch * l.spatial) as f64);
    let eps = T::from_f64(epsilon);
    let mut mean = vec![T::zero(); l.channels];
    let mut var = vec![T::zero(); l.channels];
    for c in 0..l.channels {
        let mut s = T::zero();
        for_channel(x.data(), &l, c, |v| s += v);
        let mu = s / count;
        let mut ss = T::zero();
        for_channel(x.data(), &l, c, |v| ss += (v - mu) * (v - mu));
        mean[c] = mu;
        var[c] = ss / count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for n in 0..l.batch {
        for c in 0..l.channels {
            let off = (n * l.channels + c) * l.spatial;
            let (g, b, mu, is) = (gamma.data()[c], beta.data()[c], mean[c], inv_std[c]);
            for i in off..off + l.spatial {
                let h = (x.data()[i] - mu) * is;
                xhat[i] = h;
                y[i] = g * h + b;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), y)?,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

pub fn batchnorm_forward_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    moving_mean: &Tensor<T>,
    moving_var: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let l = layout(x.shape(), gamma.len())?;
    let eps = T::from_f64(epsilon);
    let mut y = x.clone();
    let yd = y.data_mut();
    for n in 0..l.batch {
        for c in 0..l.channels {
            let off = (n * l.channels + c) * l.spatial;
            let scale = gamma.data()[c] / (moving_var.data()[c] + eps).sqrt();
            let shift = beta.data()[c] - moving_mean.data()[c] * scale;
            for v in &mut yd[off..off + l.spatial] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(y)
}

/// `moving = momentum * moving + (1 - momentum) * batch`.
pub fn update_moving_stats<T: Scalar>(
    moving_mean: &mut Tensor<T>,
    moving_var: &mut Tensor<T>,
    cache: &BnCache<T>,
    momentum: f64,
) {
    let m = T::from_f64(momentum);
    let k = T::one() - m;
    for (mv, &b) in moving_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
        *mv = m * *mv + k * b;
    }
    for (mv, &b) in moving_var.data_mut().iter_mut().zip(&cache.batch_var) {
        *mv = m * *mv + k * b;
    }
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let l = layout(dy.shape(), gamma.len())?;
    if dy.len() != cache.xhat.len() {
        return shape_err("batch norm gradient does not match the cached activations");
    }
    let m = T::from_f64((l.batch * l.spatial) as f64);
    let mut dgamma = vec![T::zero(); l.channels];
    let mut dbeta = vec![T::zero(); l.channels];
    for n in 0..l.batch {
        for c in 0..l.channels {
            let off = (n * l.channels + c) * l.spatial;
            for i in off..off + l.spatial {
                dgamma[c] += dy.data()[i] * cache.xhat[i];
                dbeta[c] += dy.data()[i];
            }
        }
    }
    // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
    let mut dx = vec![T::zero(); dy.len()];
    for n in 0..l.batch {
        for c in 0..l.channels {
            let off = (n * l.channels + c) * l.spatial;
            let k = gamma.data()[c] * cache.inv_std[c] / m;
            for i in off..off + l.spatial {
                dx[i] = k * (m * dy.data()[i] - dbeta[c] - cache.xhat[i] * dgamma[c]);
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::from_vec(dy.shape(), dx)?,
        gamma: Tensor::from_vec(&[l.channels], dgamma)?,
        beta: Tensor::from_vec(&[l.channels], dbeta)?,
    })
}
