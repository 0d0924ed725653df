//! 2-D cross-correlation lowered to GEMM through an im2col buffer.
//!
//! The column matrix has one row per `(in_channel, ky, kx)` tap and one
//! column per `(sample, out_y, out_x)` position, so a single GEMM covers the
//! whole batch.

use crate::error::{shape_err, Result};
use crate::nn::layers::Padding;
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], kernel: usize, stride: usize, padding: Padding) -> Result<Self> {
        if x_shape.len() != 4 {
            return shape_err(format!("convolution input must be NCHW, got {x_shape:?}"));
        }
        let (out_height, pad_top) = padding.resolve(x_shape[2], kernel, stride)?;
        let (out_width, pad_left) = padding.resolve(x_shape[3], kernel, stride)?;
        Ok(Self {
            batch: x_shape[0],
            in_channels: x_shape[1],
            height: x_shape[2],
            width: x_shape[3],
            kernel,
            stride,
            pad_top,
            pad_left,
            out_height,
            out_width,
        })
    }

    fn taps(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Input coordinate hit by output `o` and kernel offset `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + k).checked_sub(pad)?;
        (p < limit).then_some(p)
    }
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    pub geometry: ConvGeometry,
    pub cols: Vec<T>,
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let np = g.batch * g.positions();
    let mut cols = vec![T::zero(); g.taps() * np];
    let plane = g.height * g.width;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.batch {
                    let src = &x[(n * g.in_channels + c) * plane..][..plane];
                    let dst = &mut dst_row[n * g.positions()..][..g.positions()];
                    for oy in 0..g.out_height {
                        let Some(iy) = g.source(oy, ky, g.pad_top, g.height) else {
                            continue;
                        };
                        for ox in 0..g.out_width {
                            if let Some(ix) = g.source(ox, kx, g.pad_left, g.width) {
                                dst[oy * g.out_width + ox] = src[iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let np = g.batch * g.positions();
    let plane = g.height * g.width;
    let mut dx = vec![T::zero(); g.batch * g.in_channels * plane];
    for c in 0..g.in_channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src_row = &cols[row * np..(row + 1) * np];
                for n in 0..g.batch {
                    let dst = &mut dx[(n * g.in_channels + c) * plane..][..plane];
                    let src = &src_row[n * g.positions()..][..g.positions()];
                    for oy in 0..g.out_height {
                        let Some(iy) = g.source(oy, ky, g.pad_top, g.height) else {
                            continue;
                        };
                        for ox in 0..g.out_width {
                            if let Some(ix) = g.source(ox, kx, g.pad_left, g.width) {
                                dst[iy * g.width + ix] += src[oy * g.out_width + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Cross-correlation plus bias. `weight` is `(out, in, k, k)`, `bias` is `(out)`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] {
        return shape_err(format!("conv weight must be (out, in, k, k), got {ws:?}"));
    }
    let g = ConvGeometry::new(x.shape(), ws[2], stride, padding)?;
    if ws[1] != g.in_channels {
        return shape_err(format!(
            "conv expects {} input channels, got {}",
            ws[1], g.in_channels
        ));
    }
    let out_ch = ws[0];
    if bias.shape() != [out_ch] {
        return shape_err(format!(
            "conv bias must be ({out_ch}), got {:?}",
            bias.shape()
        ));
    }
    let cols = im2col(x.data(), &g);
    let np = g.batch * g.positions();
    let mut tmp = vec![T::zero(); out_ch * np];
    gemm(
        MatRef::new(weight.data(), out_ch, g.taps()),
        MatRef::new(&cols, g.taps(), np),
        T::zero(),
        &mut tmp,
    );

    let p = g.positions();
    let mut out = vec![T::zero(); g.batch * out_ch * p];
    for o in 0..out_ch {
        let b = bias.data()[o];
        for n in 0..g.batch {
            let src = &tmp[o * np + n * p..][..p];
            let dst = &mut out[(n * out_ch + o) * p..][..p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    let y = Tensor::from_vec(&[g.batch, out_ch, g.out_height, g.out_width], out)?;
    Ok((y, ConvCache { geometry: g, cols }))
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = &cache.geometry;
    let out_ch = weight.shape()[0];
    if dy.shape() != [g.batch, out_ch, g.out_height, g.out_width] {
        return shape_err(format!("conv upstream gradient has shape {:?}", dy.shape()));
    }
    let p = g.positions();
    let np = g.batch * p;
    // (N, O, P) -> (O, N*P)
    let mut dt = vec![T::zero(); out_ch * np];
    let mut db = vec![T::zero(); out_ch];
    for n in 0..g.batch {
        for o in 0..out_ch {
            let src = &dy.data()[(n * out_ch + o) * p..][..p];
            dt[o * np + n * p..][..p].copy_from_slice(src);
            db[o] += src.iter().copied().sum::<T>();
        }
    }
    let taps = g.taps();
    let mut dw = vec![T::zero(); out_ch * taps];
    gemm(
        MatRef::new(&dt, out_ch, np),
        MatRef::new(&cache.cols, taps, np).t(),
        T::zero(),
        &mut dw,
    );
    let mut dcols = vec![T::zero(); taps * np];
    gemm(
        MatRef::new(weight.data(), out_ch, taps).t(),
        MatRef::new(&dt, out_ch, np),
        T::zero(),
        &mut dcols,
    );
    let dx = col2im(&dcols, g);
    Ok(ConvGrads {
        input: Tensor::from_vec(&[g.batch, g.in_channels, g.height, g.width], dx)?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: Tensor::from_vec(&[out_ch], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation, used as an oracle.
    fn naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        padding: Padding,
    ) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let (oh, pt) = padding.resolve(h, k, stride).unwrap();
        let (ow, pl) = padding.resolve(wd, k, stride).unwrap();
        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        for s in 0..n {
            for f in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b.data()[f];
                        for ch in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as isize - pt as isize;
                                    let ix = (xx * stride + kx) as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()
                                        [((s * c + ch) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((f * c + ch) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data_mut()[((s * o + f) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn first_block_shape() {
        let x = Tensor::<f32>::zeros(&[1, 3, 28, 28]);
        let w = Tensor::zeros(&[64, 3, 2, 2]);
        let b = Tensor::zeros(&[64]);
        let (y, _) = conv2d_forward(&x, &w, &b, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 64, 27, 27]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_window() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let b = Tensor::zeros(&[1]);
        let (y, _) = conv2d_forward(&x, &w, &b, 1, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 2, 2]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &w, &b, 1, Padding::Valid).is_err());
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = crate::rng::Rng::new(5);
        for &(stride, padding, k) in &[
            (1, Padding::Valid, 2),
            (2, Padding::Valid, 3),
            (1, Padding::Same, 3),
            (2, Padding::Same, 2),
        ] {
            let x = Tensor::from_vec(
                &[2, 3, 7, 6],
                rng.uniform_vec(-1.0, 1.0, 2 * 3 * 7 * 6).unwrap(),
            )
            .unwrap();
            let w = Tensor::from_vec(
                &[4, 3, k, k],
                rng.uniform_vec(-1.0, 1.0, 4 * 3 * k * k).unwrap(),
            )
            .unwrap();
            let b = Tensor::from_vec(&[4], rng.uniform_vec(-1.0, 1.0, 4).unwrap()).unwrap();
            let (y, _) = conv2d_forward(&x, &w, &b, stride, padding).unwrap();
            let expect = naive(&x, &w, &b, stride, padding);
            assert_eq!(y.shape(), expect.shape());
            assert!(y.max_abs_diff(&expect) < 1e-12);
        }
    }
}
