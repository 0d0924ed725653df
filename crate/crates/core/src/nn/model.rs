//! Sequential model: layer specs, parameter storage and the forward/backward
//! passes over the whole chain.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::activation::{relu_backward, relu_inplace, softmax, softmax_backward};
use crate::nn::batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, update_moving_stats,
    BnCache,
};
use crate::nn::conv::{conv2d_backward, conv2d_forward, ConvCache};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::dropout::{dropout_backward, dropout_forward};
use crate::nn::layers::{ActShape, Activation, LayerSpec, Padding};
use crate::nn::pool::{maxpool_backward, maxpool_forward};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const NUM_CLASSES: usize = 7;
pub const INPUT_SIZE: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: ActShape,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub kind: &'static str,
    pub output: ActShape,
    pub params: usize,
}

/// Dropout rates and batch-norm constants for the reference architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionModelOptions {
    pub conv_dropout: f64,
    pub dense_dropout: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for LesionModelOptions {
    fn default() -> Self {
        Self {
            conv_dropout: 0.25,
            dense_dropout: 0.5,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
        }
    }
}

impl ModelSpec {
    /// The 20-layer lesion classifier over `(3, 28, 28)` inputs.
    ///
    /// Kernel sizes follow from the layer output shapes and parameter
    /// counts: 2x2 valid convolutions for the first three blocks, a 1x1
    /// convolution in the fourth, 2/2 pooling except the last pool, which is
    /// 2/1 with same padding and so keeps the 2x2 plane.
    pub fn lesion(opts: LesionModelOptions) -> Self {
        let conv = |out_channels, kernel_size| LayerSpec::Conv2D {
            out_channels,
            kernel_size,
            stride: 1,
            padding: Padding::Valid,
            activation: Activation::Relu,
        };
        let pool = LayerSpec::MaxPool2D {
            pool_size: 2,
            stride: 2,
            padding: Padding::Valid,
        };
        let bn = |channels| LayerSpec::BatchNorm {
            channels,
            momentum: opts.bn_momentum,
            epsilon: opts.bn_epsilon,
        };
        let drop = LayerSpec::Dropout {
            rate: opts.conv_dropout,
        };
        Self {
            input: ActShape::Image {
                channels: 3,
                height: INPUT_SIZE,
                width: INPUT_SIZE,
            },
            layers: vec![
                conv(64, 2),
                pool,
                bn(64),
                conv(512, 2),
                pool,
                bn(512),
                drop,
                conv(1024, 2),
                pool,
                bn(1024),
                drop,
                conv(1024, 1),
                LayerSpec::MaxPool2D {
                    pool_size: 2,
                    stride: 1,
                    padding: Padding::Same,
                },
                bn(1024),
                drop,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 256,
                    activation: Activation::Relu,
                },
                LayerSpec::Dropout {
                    rate: opts.dense_dropout,
                },
                LayerSpec::Dense {
                    units: NUM_CLASSES,
                    activation: Activation::Softmax,
                },
            ],
        }
    }

    /// Output shape of every layer; errors if any layer cannot consume its input.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(
                layer,
                LayerSpec::Dense {
                    activation: Activation::Softmax,
                    ..
                }
            ) && i + 1 != self.layers.len()
            {
                return arg_err("softmax is only allowed on the final layer");
            }
            cur = layer.output_shape(cur)?;
            out.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense {
                activation: Activation::Softmax,
                ..
            }) => Ok(out),
            _ => arg_err("model must end in a softmax dense layer"),
        }
    }

    pub fn input_shapes(&self) -> Result<Vec<ActShape>> {
        let shapes = self.shapes()?;
        let mut ins = vec![self.input];
        ins.extend_from_slice(&shapes[..shapes.len() - 1]);
        Ok(ins)
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map(ActShape::numel).unwrap_or(0))
    }

    /// Names in the `<kind>_<n>` style, numbered per kind from 1.
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        self.layers
            .iter()
            .map(|l| {
                let c = counts.entry(l.kind()).or_default();
                *c += 1;
                format!("{}_{}", l.kind(), c)
            })
            .collect()
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        let outs = self.shapes()?;
        let ins = self.input_shapes()?;
        Ok(self
            .layer_names()
            .into_iter()
            .zip(&self.layers)
            .zip(outs.iter().zip(&ins))
            .map(|((name, layer), (&output, &input))| SummaryRow {
                name,
                kind: layer.kind(),
                output,
                params: layer.param_count(input),
            })
            .collect())
    }

    pub fn total_params(&self) -> Result<usize> {
        Ok(self.summary()?.iter().map(|r| r.params).sum())
    }

    pub fn describe(&self) -> String {
        serde_json::to_string(self).expect("model spec serializes")
    }

    pub fn from_description(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("bad architecture description: {e}")))?;
        spec.shapes()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    None,
    Conv {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    BatchNorm {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        moving_mean: Tensor<T>,
        moving_var: Tensor<T>,
    },
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// He-normal weights, zero biases, unit gamma, zero beta, moving
    /// statistics at mean 0 / variance 1.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        let ins = spec.input_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, &input) in spec.layers.iter().zip(&ins) {
            let p = match *layer {
                LayerSpec::Conv2D {
                    out_channels,
                    kernel_size,
                    ..
                } => {
                    let fan_in = input.channels() * kernel_size * kernel_size;
                    let shape = [out_channels, input.channels(), kernel_size, kernel_size];
                    let n = shape.iter().product();
                    LayerParams::Conv {
                        weight: Tensor::from_vec(
                            &shape,
                            rng.normal_vec(0.0, (2.0 / fan_in as f64).sqrt(), n)?,
                        )?,
                        bias: Tensor::zeros(&[out_channels]),
                    }
                }
                LayerSpec::BatchNorm { channels, .. } => LayerParams::BatchNorm {
                    gamma: Tensor::full(&[channels], T::one()),
                    beta: Tensor::zeros(&[channels]),
                    moving_mean: Tensor::zeros(&[channels]),
                    moving_var: Tensor::full(&[channels], T::one()),
                },
                LayerSpec::Dense { units, .. } => {
                    let fan_in = input.numel();
                    LayerParams::Dense {
                        weight: Tensor::from_vec(
                            &[fan_in, units],
                            rng.normal_vec(0.0, (2.0 / fan_in as f64).sqrt(), fan_in * units)?,
                        )?,
                        bias: Tensor::zeros(&[units]),
                    }
                }
                _ => LayerParams::None,
            };
            layers.push(p);
        }
        Ok(Self { layers })
    }

    /// Every tensor, trainable or not, with its `layer.role` name.
    pub fn named_tensors(&self, spec: &ModelSpec) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (name, p) in spec.layer_names().into_iter().zip(&self.layers) {
            match p {
                LayerParams::None => {}
                LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                    out.push((format!("{name}.kernel"), weight));
                    out.push((format!("{name}.bias"), bias));
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    moving_mean,
                    moving_var,
                } => {
                    out.push((format!("{name}.gamma"), gamma));
                    out.push((format!("{name}.beta"), beta));
                    out.push((format!("{name}.moving_mean"), moving_mean));
                    out.push((format!("{name}.moving_variance"), moving_var));
                }
            }
        }
        out
    }

    /// Rebuilds a store from named tensors, checking every shape against `spec`.
    pub fn from_named(spec: &ModelSpec, mut tensors: HashMap<String, Tensor<T>>) -> Result<Self> {
        let ins = spec.input_shapes()?;
        let mut layers = Vec::new();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, architecture expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for ((name, layer), &input) in spec.layer_names().iter().zip(&spec.layers).zip(&ins) {
            let shapes = layer.param_shapes(input);
            let p = match layer {
                LayerSpec::Conv2D { .. } => LayerParams::Conv {
                    weight: take(&format!("{name}.kernel"), &shapes[0])?,
                    bias: take(&format!("{name}.bias"), &shapes[1])?,
                },
                LayerSpec::Dense { .. } => LayerParams::Dense {
                    weight: take(&format!("{name}.kernel"), &shapes[0])?,
                    bias: take(&format!("{name}.bias"), &shapes[1])?,
                },
                LayerSpec::BatchNorm { .. } => LayerParams::BatchNorm {
                    gamma: take(&format!("{name}.gamma"), &shapes[0])?,
                    beta: take(&format!("{name}.beta"), &shapes[1])?,
                    moving_mean: take(&format!("{name}.moving_mean"), &shapes[2])?,
                    moving_var: take(&format!("{name}.moving_variance"), &shapes[3])?,
                },
                _ => LayerParams::None,
            };
            layers.push(p);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self { layers })
    }

    /// Optimizer-visible tensors in a fixed order (moving statistics excluded).
    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for p in &self.layers {
            match p {
                LayerParams::None => {}
                LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for p in &mut self.layers {
            match p {
                LayerParams::None => {}
                LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
            }
        }
        out
    }

    pub fn trainable_names(&self, spec: &ModelSpec) -> Vec<String> {
        self.named_tensors(spec)
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| !n.ends_with(".moving_mean") && !n.ends_with(".moving_variance"))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let layers = self
            .layers
            .iter()
            .map(|p| match p {
                LayerParams::None => LayerParams::None,
                LayerParams::Conv { weight, bias } => LayerParams::Conv {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                LayerParams::Dense { weight, bias } => LayerParams::Dense {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    moving_mean,
                    moving_var,
                } => LayerParams::BatchNorm {
                    gamma: gamma.cast(),
                    beta: beta.cast(),
                    moving_mean: moving_mean.cast(),
                    moving_var: moving_var.cast(),
                },
            })
            .collect();
        ParamStore { layers }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|p| match p {
            LayerParams::None => true,
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                weight.all_finite() && bias.all_finite()
            }
            LayerParams::BatchNorm {
                gamma,
                beta,
                moving_mean,
                moving_var,
            } => {
                gamma.all_finite()
                    && beta.all_finite()
                    && moving_mean.all_finite()
                    && moving_var.all_finite()
            }
        })
    }
}

/// Builds the reference architecture with freshly initialized parameters.
pub fn build_lesion_model(seed: u64) -> Result<(ModelSpec, ParamStore<f32>)> {
    let spec = ModelSpec::lesion(LesionModelOptions::default());
    let params = ParamStore::init(&spec, &mut Rng::new(seed))?;
    Ok((spec, params))
}

#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    /// Inference traces keep nothing.
    Empty,
    Conv {
        conv: ConvCache<T>,
        out: Option<Tensor<T>>,
    },
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    BatchNorm(BnCache<T>),
    Dropout {
        mask: Option<Vec<T>>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
        out: Option<Tensor<T>>,
    },
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub mode: Mode,
    pub caches: Vec<LayerCache<T>>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Hash of every ReLU on/off bit and max-pool winner. Two forwards with the
    /// same fingerprint are on the same piecewise-smooth region of the loss.
    pub fn activation_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.caches {
            match c {
                LayerCache::Conv { out: Some(o), .. } | LayerCache::Dense { out: Some(o), .. } => {
                    for chunk in o.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (i, &v)| acc | ((v > T::zero()) as u64) << i);
                        bits.hash(&mut h);
                    }
                }
                LayerCache::Pool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

pub fn model_forward<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    batch: &Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    spec.shapes()?;
    if params.layers.len() != spec.layers.len() {
        return shape_err("parameter store does not match the model");
    }
    let expect = spec
        .input
        .batched(batch.shape().first().copied().unwrap_or(0));
    if batch.shape() != expect.as_slice() {
        return shape_err(format!(
            "model expects input {expect:?}, got {:?}",
            batch.shape()
        ));
    }
    let training = mode == Mode::Training;
    let mut x = batch.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (layer, p) in spec.layers.iter().zip(&params.layers) {
        let (y, cache) = match (layer, p) {
            (
                &LayerSpec::Conv2D {
                    stride,
                    padding,
                    activation,
                    ..
                },
                LayerParams::Conv { weight, bias },
            ) => {
                let (mut y, conv) = conv2d_forward(&x, weight, bias, stride, padding)?;
                let relu = activation == Activation::Relu;
                if relu {
                    relu_inplace(&mut y);
                }
                let cache = if training {
                    LayerCache::Conv {
                        conv,
                        out: relu.then(|| y.clone()),
                    }
                } else {
                    LayerCache::Empty
                };
                (y, cache)
            }
            (
                &LayerSpec::MaxPool2D {
                    pool_size,
                    stride,
                    padding,
                },
                LayerParams::None,
            ) => {
                let (y, argmax) = maxpool_forward(&x, pool_size, stride, padding)?;
                let cache = if training {
                    LayerCache::Pool {
                        argmax,
                        input_shape: x.shape().to_vec(),
                    }
                } else {
                    LayerCache::Empty
                };
                (y, cache)
            }
            (
                &LayerSpec::BatchNorm { epsilon, .. },
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    moving_mean,
                    moving_var,
                },
            ) => {
                if training {
                    let (y, c) = batchnorm_forward_train(&x, gamma, beta, epsilon)?;
                    (y, LayerCache::BatchNorm(c))
                } else {
                    (
                        batchnorm_forward_infer(&x, gamma, beta, moving_mean, moving_var, epsilon)?,
                        LayerCache::Empty,
                    )
                }
            }
            (&LayerSpec::Dropout { rate }, LayerParams::None) => {
                let (y, mask) = dropout_forward(&x, rate, rng, training);
                (
                    y,
                    if training {
                        LayerCache::Dropout { mask }
                    } else {
                        LayerCache::Empty
                    },
                )
            }
            (LayerSpec::Flatten, LayerParams::None) => {
                let input_shape = x.shape().to_vec();
                let n = input_shape[0];
                let features = x.len() / n;
                let y = x.reshape(&[n, features])?;
                (
                    y,
                    if training {
                        LayerCache::Flatten { input_shape }
                    } else {
                        LayerCache::Empty
                    },
                )
            }
            (&LayerSpec::Dense { activation, .. }, LayerParams::Dense { weight, bias }) => {
                let mut y = dense_forward(&x, weight, bias)?;
                let relu = activation == Activation::Relu;
                if relu {
                    relu_inplace(&mut y);
                }
                let cache = if training {
                    LayerCache::Dense {
                        input: x,
                        out: relu.then(|| y.clone()),
                    }
                } else {
                    LayerCache::Empty
                };
                (y, cache)
            }
            (layer, _) => {
                return shape_err(format!("parameters do not match layer {}", layer.kind()))
            }
        };
        caches.push(cache);
        x = y;
    }
    let probs = softmax(&x)?;
    let trace = ForwardTrace {
        mode,
        caches,
        logits: x,
        probs: probs.clone(),
    };
    Ok((probs, trace))
}

/// Folds the batch statistics recorded in a training trace into the
/// batch-norm moving averages.
pub fn apply_moving_stats<T: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamStore<T>,
    trace: &ForwardTrace<T>,
) -> Result<()> {
    if trace.mode != Mode::Training {
        return Err(Error::State(
            "moving statistics need a training-mode trace".into(),
        ));
    }
    for ((layer, p), cache) in spec
        .layers
        .iter()
        .zip(&mut params.layers)
        .zip(&trace.caches)
    {
        if let (
            &LayerSpec::BatchNorm { momentum, .. },
            LayerParams::BatchNorm {
                moving_mean,
                moving_var,
                ..
            },
            LayerCache::BatchNorm(c),
        ) = (layer, p, cache)
        {
            update_moving_stats(moving_mean, moving_var, c, momentum);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads<T> {
    None,
    Conv { weight: Tensor<T>, bias: Tensor<T> },
    BatchNorm { gamma: Tensor<T>, beta: Tensor<T> },
    Dense { weight: Tensor<T>, bias: Tensor<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
    /// Gradient with respect to the input batch.
    pub input: Tensor<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Same order as [`ParamStore::trainable`].
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrads::None => {}
                LayerGrads::Conv { weight, bias } | LayerGrads::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerGrads::BatchNorm { gamma, beta } => {
                    out.push(gamma);
                    out.push(beta);
                }
            }
        }
        out
    }
}

/// Upstream gradient at the model output.
pub enum OutputGrad<T> {
    /// With respect to the final-layer logits (fused softmax + loss).
    Logits(Tensor<T>),
    /// With respect to the softmax probabilities.
    Probs(Tensor<T>),
}

pub fn model_backward<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    trace: &ForwardTrace<T>,
    upstream: OutputGrad<T>,
) -> Result<Gradients<T>> {
    if trace.mode != Mode::Training {
        return Err(Error::State(
            "backward pass needs a training-mode trace".into(),
        ));
    }
    if trace.caches.len() != spec.layers.len() {
        return Err(Error::State("trace does not belong to this model".into()));
    }
    let mut d = match upstream {
        OutputGrad::Logits(g) => g,
        OutputGrad::Probs(g) => softmax_backward(&trace.probs, &g)?,
    };
    if d.shape() != trace.logits.shape() {
        return shape_err(format!(
            "output gradient {:?} vs logits {:?}",
            d.shape(),
            trace.logits.shape()
        ));
    }
    let mut grads = vec![LayerGrads::None; spec.layers.len()];
    for i in (0..spec.layers.len()).rev() {
        d = match (&trace.caches[i], &params.layers[i]) {
            (LayerCache::Conv { conv, out }, LayerParams::Conv { weight, .. }) => {
                if let Some(o) = out {
                    d = relu_backward(&d, o);
                }
                let g = conv2d_backward(conv, weight, &d)?;
                grads[i] = LayerGrads::Conv {
                    weight: g.weight,
                    bias: g.bias,
                };
                g.input
            }
            (
                LayerCache::Pool {
                    argmax,
                    input_shape,
                },
                _,
            ) => maxpool_backward(&d, argmax, input_shape)?,
            (LayerCache::BatchNorm(c), LayerParams::BatchNorm { gamma, .. }) => {
                let g = batchnorm_backward(&d, c, gamma)?;
                grads[i] = LayerGrads::BatchNorm {
                    gamma: g.gamma,
                    beta: g.beta,
                };
                g.input
            }
            (LayerCache::Dropout { mask }, _) => dropout_backward(&d, mask.as_deref()),
            (LayerCache::Flatten { input_shape }, _) => d.reshape(input_shape)?,
            (LayerCache::Dense { input, out }, LayerParams::Dense { weight, .. }) => {
                if let Some(o) = out {
                    d = relu_backward(&d, o);
                }
                let g = dense_backward(input, weight, &d)?;
                grads[i] = LayerGrads::Dense {
                    weight: g.weight,
                    bias: g.bias,
                };
                g.input
            }
            _ => {
                return Err(Error::State(format!(
                    "trace entry {i} does not match layer {}",
                    spec.layers[i].kind()
                )))
            }
        };
    }
    Ok(Gradients {
        layers: grads,
        input: d,
    })
}
