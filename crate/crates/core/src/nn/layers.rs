use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    /// Only valid on the final layer; the model output is the softmax of its logits.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Output size `ceil(in / stride)`; the extra row/column goes after.
    Same,
}

impl Padding {
    /// Returns `(output size, leading pad)` along one spatial axis.
    pub fn resolve(self, input: usize, window: usize, stride: usize) -> Result<(usize, usize)> {
        match self {
            Padding::Valid => {
                if input < window {
                    return shape_err(format!("window {window} larger than input {input}"));
                }
                Ok(((input - window) / stride + 1, 0))
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + window).saturating_sub(input);
                Ok((out, total / 2))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2D {
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    MaxPool2D {
        pool_size: usize,
        stride: usize,
        padding: Padding,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
        epsilon: f64,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            ActShape::Flat(n) => n,
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            ActShape::Image { channels, .. } => channels,
            ActShape::Flat(n) => n,
        }
    }

    /// Batched tensor shape, NCHW or `(N, features)`.
    pub fn batched(&self, n: usize) -> Vec<usize> {
        match *self {
            ActShape::Image {
                channels,
                height,
                width,
            } => vec![n, channels, height, width],
            ActShape::Flat(f) => vec![n, f],
        }
    }
}

impl fmt::Display for ActShape {
    /// Channels-last, the way the reference model summary prints shapes.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ActShape::Image {
                channels,
                height,
                width,
            } => write!(f, "({height}, {width}, {channels})"),
            ActShape::Flat(n) => write!(f, "({n})"),
        }
    }
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2D {
                out_channels,
                kernel_size,
                stride,
                ..
            } => {
                if out_channels == 0 || kernel_size == 0 || stride == 0 {
                    return arg_err("conv2d needs out_channels, kernel_size, stride >= 1");
                }
            }
            LayerSpec::MaxPool2D {
                pool_size, stride, ..
            } => {
                if pool_size == 0 || stride == 0 {
                    return arg_err("max pooling needs pool_size, stride >= 1");
                }
            }
            LayerSpec::BatchNorm {
                channels,
                momentum,
                epsilon,
            } => {
                if channels == 0 || !(0.0..=1.0).contains(&momentum) || epsilon <= 0.0 {
                    return arg_err(
                        "batch norm needs channels >= 1, momentum in [0,1], epsilon > 0",
                    );
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return arg_err(format!("dropout rate {rate} outside [0, 1)"));
                }
            }
            LayerSpec::Flatten => {}
            LayerSpec::Dense { units, .. } => {
                if units == 0 {
                    return arg_err("dense needs units >= 1");
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "conv2d",
            LayerSpec::MaxPool2D { .. } => "max_pooling2d",
            LayerSpec::BatchNorm { .. } => "batch_normalization",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn output_shape(&self, input: ActShape) -> Result<ActShape> {
        self.validate()?;
        match (*self, input) {
            (
                LayerSpec::Conv2D {
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                    ..
                },
                ActShape::Image { height, width, .. },
            ) => {
                let (h, _) = padding.resolve(height, kernel_size, stride)?;
                let (w, _) = padding.resolve(width, kernel_size, stride)?;
                Ok(ActShape::Image {
                    channels: out_channels,
                    height: h,
                    width: w,
                })
            }
            (
                LayerSpec::MaxPool2D {
                    pool_size,
                    stride,
                    padding,
                },
                ActShape::Image {
                    channels,
                    height,
                    width,
                },
            ) => {
                let (h, _) = padding.resolve(height, pool_size, stride)?;
                let (w, _) = padding.resolve(width, pool_size, stride)?;
                Ok(ActShape::Image {
                    channels,
                    height: h,
                    width: w,
                })
            }
            (LayerSpec::BatchNorm { channels, .. }, s) => {
                if s.channels() != channels {
                    return shape_err(format!(
                        "batch norm over {channels} channels fed {} channels",
                        s.channels()
                    ));
                }
                Ok(s)
            }
            (LayerSpec::Dropout { .. }, s) => Ok(s),
            (LayerSpec::Flatten, s) => Ok(ActShape::Flat(s.numel())),
            (LayerSpec::Dense { units, .. }, ActShape::Flat(_)) => Ok(ActShape::Flat(units)),
            (layer, s) => shape_err(format!(
                "{} cannot consume activation of shape {s}",
                layer.kind()
            )),
        }
    }

    /// Shapes of this layer's parameter tensors given its input shape, in
    /// storage order. Batch norm lists gamma, beta, moving mean, moving variance.
    pub fn param_shapes(&self, input: ActShape) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2D {
                out_channels,
                kernel_size,
                ..
            } => vec![
                vec![out_channels, input.channels(), kernel_size, kernel_size],
                vec![out_channels],
            ],
            LayerSpec::BatchNorm { channels, .. } => vec![vec![channels]; 4],
            LayerSpec::Dense { units, .. } => vec![vec![input.numel(), units], vec![units]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self, input: ActShape) -> usize {
        self.param_shapes(input)
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}
