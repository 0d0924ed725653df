use crate::error::{shape_err, Result};
use crate::nn::layers::Padding;
use crate::tensor::{Scalar, Tensor};

/// Window maximum. Padded cells count as negative infinity, so they never win.
/// Ties go to the first cell in row-major window order.
///
/// Returns the pooled tensor and, per output element, the flat input index of
/// the winning cell.
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    pool_size: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 {
        return shape_err(format!("max pooling input must be NCHW, got {s:?}"));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, pt) = padding.resolve(h, pool_size, stride)?;
    let (ow, pl) = padding.resolve(w, pool_size, stride)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..pool_size {
                    let Some(iy) = (oy * stride + ky).checked_sub(pt).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..pool_size {
                        let Some(ix) = (ox * stride + kx).checked_sub(pl).filter(|&v| v < w) else {
                            continue;
                        };
                        let idx = base + iy * w + ix;
                        if best_idx == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, argmax))
}

/// Routes each upstream element to its window winner.
pub fn maxpool_backward<T: Scalar>(
    dy: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return shape_err("max pooling gradient does not match the recorded mask");
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &i) in dy.data().iter().zip(argmax) {
        d[i] += g;
    }
    Ok(dx)
}
