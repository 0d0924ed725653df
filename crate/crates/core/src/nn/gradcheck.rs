//! Central finite-difference checks of the analytic gradients, run in `f64`.
//!
//! Each layer is checked in isolation against the scalar `sum(r * y)` for a
//! fixed random projection `r`; the full model is checked against the
//! weighted cross-entropy loss. Coordinates whose perturbation flips a ReLU
//! or changes a max-pool winner are skipped: the loss is not differentiable
//! across those points, so a finite difference there says nothing about the
//! analytic gradient.

use crate::error::{arg_err, Result};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward_train};
use crate::nn::conv::{conv2d_backward, conv2d_forward};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::dropout::{dropout_backward, dropout_forward};
use crate::nn::layers::Padding;
use crate::nn::model::{
    model_backward, model_forward, LesionModelOptions, Mode, ModelSpec, OutputGrad, ParamStore,
};
use crate::nn::pool::{maxpool_backward, maxpool_forward};
use crate::nn::softmax;
use crate::optim::{weighted_cce_labels, ClassWeights};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error. Central differences at
    /// `step` carry up to ~1e-10 of rounding noise on an O(1) loss, so a
    /// gradient that is exactly zero (a bias feeding batch norm) would
    /// otherwise score as a large relative error.
    pub abs_floor: f64,
    /// Coordinates sampled per tensor in the full-model check.
    pub model_samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-5,
            model_samples: 12,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    /// Which tensor was checked, e.g. `conv2d.weight` or `model.dense_1.kernel`.
    pub name: String,
    pub group: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }
}

pub const GROUPS: [&str; 7] = [
    "conv2d",
    "max_pooling2d",
    "batch_normalization",
    "dropout",
    "dense",
    "softmax_cce",
    "model",
];

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rng.uniform_vec(-1.0, 1.0, n).unwrap()).unwrap()
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks every coordinate of `x` where `f` stays on the same smooth piece.
/// `f` returns the scalar objective plus a fingerprint of the active piece.
fn check_all(
    name: String,
    group: &'static str,
    x: &mut Tensor<f64>,
    analytic: &Tensor<f64>,
    coords: &[usize],
    cfg: &GradCheckConfig,
    f: &mut dyn FnMut(&Tensor<f64>) -> (f64, u64),
) -> CheckResult {
    let (_, base_fp) = f(x);
    let mut max_rel: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for &i in coords {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + cfg.step;
        let (plus, fp_plus) = f(x);
        x.data_mut()[i] = orig - cfg.step;
        let (minus, fp_minus) = f(x);
        x.data_mut()[i] = orig;
        if fp_plus != base_fp || fp_minus != base_fp {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        max_rel = max_rel.max(relative_error(analytic.data()[i], numeric, cfg.abs_floor));
        checked += 1;
    }
    CheckResult {
        name,
        group,
        max_rel_error: max_rel,
        checked,
        skipped,
    }
}

fn every(t: &Tensor<f64>) -> Vec<usize> {
    (0..t.len()).collect()
}

fn check_conv(cfg: &GradCheckConfig) -> Vec<CheckResult> {
    let mut rng = Rng::new(cfg.seed);
    let mut out = Vec::new();
    for (tag, stride, padding, k) in [
        ("valid", 1, Padding::Valid, 2),
        ("same_s2", 2, Padding::Same, 3),
    ] {
        let mut x = random(&mut rng, &[2, 3, 5, 5]);
        let mut w = random(&mut rng, &[4, 3, k, k]);
        let mut b = random(&mut rng, &[4]);
        let (y, cache) = conv2d_forward(&x, &w, &b, stride, padding).unwrap();
        let r = random(&mut rng, y.shape());
        let g = conv2d_backward(&cache, &w, &r).unwrap();
        let (w0, b0, x0) = (w.clone(), b.clone(), x.clone());
        let coords = every(&x);
        out.push(check_all(
            format!("conv2d[{tag}].input"),
            "conv2d",
            &mut x,
            &g.input,
            &coords,
            cfg,
            &mut |xx| {
                (
                    project(
                        &conv2d_forward(xx, &w0, &b0, stride, padding).unwrap().0,
                        &r,
                    ),
                    0,
                )
            },
        ));
        let coords = every(&w);
        out.push(check_all(
            format!("conv2d[{tag}].weight"),
            "conv2d",
            &mut w,
            &g.weight,
            &coords,
            cfg,
            &mut |ww| {
                (
                    project(
                        &conv2d_forward(&x0, ww, &b0, stride, padding).unwrap().0,
                        &r,
                    ),
                    0,
                )
            },
        ));
        let coords = every(&b);
        out.push(check_all(
            format!("conv2d[{tag}].bias"),
            "conv2d",
            &mut b,
            &g.bias,
            &coords,
            cfg,
            &mut |bb| {
                (
                    project(
                        &conv2d_forward(&x0, &w0, bb, stride, padding).unwrap().0,
                        &r,
                    ),
                    0,
                )
            },
        ));
    }
    out
}

fn check_pool(cfg: &GradCheckConfig) -> Vec<CheckResult> {
    let mut rng = Rng::new(cfg.seed ^ 1);
    let mut out = Vec::new();
    for (tag, size, stride, padding) in [
        ("2x2_s2", 2, 2, Padding::Valid),
        ("2x2_s1_same", 2, 1, Padding::Same),
    ] {
        let mut x = random(&mut rng, &[2, 3, 5, 5]);
        let (y, mask) = maxpool_forward(&x, size, stride, padding).unwrap();
        let r = random(&mut rng, y.shape());
        let dx = maxpool_backward(&r, &mask, x.shape()).unwrap();
        let coords = every(&x);
        out.push(check_all(
            format!("max_pooling2d[{tag}].input"),
            "max_pooling2d",
            &mut x,
            &dx,
            &coords,
            cfg,
            &mut |xx| {
                let (y, m) = maxpool_forward(xx, size, stride, padding).unwrap();
                (
                    project(&y, &r),
                    m.iter()
                        .fold(0u64, |h, &i| h.wrapping_mul(31).wrapping_add(i as u64)),
                )
            },
        ));
    }
    out
}

fn check_batchnorm(cfg: &GradCheckConfig) -> Vec<CheckResult> {
    let mut rng = Rng::new(cfg.seed ^ 2);
    let mut out = Vec::new();
    for shape in [vec![4, 3, 2, 2], vec![5, 3]] {
        let tag = if shape.len() == 4 { "nchw" } else { "flat" };
        let mut x = random(&mut rng, &shape);
        let mut gamma = random(&mut rng, &[3]);
        let mut beta = random(&mut rng, &[3]);
        let (y, cache) = batchnorm_forward_train(&x, &gamma, &beta, 1e-3).unwrap();
        let r = random(&mut rng, y.shape());
        let g = batchnorm_backward(&r, &cache, &gamma).unwrap();
        let (x0, g0, b0) = (x.clone(), gamma.clone(), beta.clone());
        let coords = every(&x);
        out.push(check_all(
            format!("batch_normalization[{tag}].input"),
            "batch_normalization",
            &mut x,
            &g.input,
            &coords,
            cfg,
            &mut |xx| {
                (
                    project(&batchnorm_forward_train(xx, &g0, &b0, 1e-3).unwrap().0, &r),
                    0,
                )
            },
        ));
        let coords = every(&gamma);
        out.push(check_all(
            format!("batch_normalization[{tag}].gamma"),
            "batch_normalization",
            &mut gamma,
            &g.gamma,
            &coords,
            cfg,
            &mut |gg| {
                (
                    project(&batchnorm_forward_train(&x0, gg, &b0, 1e-3).unwrap().0, &r),
                    0,
                )
            },
        ));
        let coords = every(&beta);
        out.push(check_all(
            format!("batch_normalization[{tag}].beta"),
            "batch_normalization",
            &mut beta,
            &g.beta,
            &coords,
            cfg,
            &mut |bb| {
                (
                    project(&batchnorm_forward_train(&x0, &g0, bb, 1e-3).unwrap().0, &r),
                    0,
                )
            },
        ));
    }
    out
}

fn check_dropout(cfg: &GradCheckConfig) -> Vec<CheckResult> {
    let mut rng = Rng::new(cfg.seed ^ 3);
    let mut x = random(&mut rng, &[3, 10]);
    let mask_seed = cfg.seed ^ 0xD0;
    let (y, mask) = dropout_forward(&x, 0.4, &mut Rng::new(mask_seed), true);
    let r = random(&mut rng, y.shape());
    let dx = dropout_backward(&r, mask.as_deref());
    let coords = every(&x);
    vec![check_all(
        "dropout.input".into(),
        "dropout",
        &mut x,
        &dx,
        &coords,
        cfg,
        &mut |xx| {
            (
                project(
                    &dropout_forward(xx, 0.4, &mut Rng::new(mask_seed), true).0,
                    &r,
                ),
                0,
            )
        },
    )]
}

fn check_dense(cfg: &GradCheckConfig) -> Vec<CheckResult> {
    let mut rng = Rng::new(cfg.seed ^ 4);
    let mut x = random(&mut rng, &[3, 6]);
    let mut w = random(&mut rng, &[6, 4]);
    let mut b = random(&mut rng, &[4]);
    let y = dense_forward(&x, &w, &b).unwrap();
    let r = random(&mut rng, y.shape());
    let g = dense_backward(&x, &w, &r).unwrap();
    let (x0, w0, b0) = (x.clone(), w.clone(), b.clone());
    let mut out = Vec::new();
    let coords = every(&x);
    out.push(check_all(
        "dense.input".into(),
        "dense",
        &mut x,
        &g.input,
        &coords,
        cfg,
        &mut |xx| (project(&dense_forward(xx, &w0, &b0).unwrap(), &r), 0),
    ));
    let coords = every(&w);
    out.push(check_all(
        "dense.weight".into(),
        "dense",
        &mut w,
        &g.weight,
        &coords,
        cfg,
        &mut |ww| (project(&dense_forward(&x0, ww, &b0).unwrap(), &r), 0),
    ));
    let coords = every(&b);
    out.push(check_all(
        "dense.bias".into(),
        "dense",
        &mut b,
        &g.bias,
        &coords,
        cfg,
        &mut |bb| (project(&dense_forward(&x0, &w0, bb).unwrap(), &r), 0),
    ));
    out
}

fn check_softmax_cce(cfg: &GradCheckConfig) -> Vec<CheckResult> {
    let mut rng = Rng::new(cfg.seed ^ 5);
    let mut logits = Tensor::from_vec(&[4, 7], rng.uniform_vec(-3.0, 3.0, 28).unwrap()).unwrap();
    let labels = [5usize, 0, 4, 5];
    let weights = crate::dataset::nv_half_class_weights();
    let loss =
        |l: &Tensor<f64>| weighted_cce_labels(&softmax(l).unwrap(), &labels, &weights).unwrap();
    let analytic = loss(&logits).grad_logits;
    let coords = every(&logits);
    vec![check_all(
        "softmax_cce.logits".into(),
        "softmax_cce",
        &mut logits,
        &analytic,
        &coords,
        cfg,
        &mut |l| (loss(l).loss, 0),
    )]
}

/// Sampled coordinates of `t`: the largest-magnitude analytic entry plus
/// `n` uniform draws.
fn sample_coords(grad: &Tensor<f64>, n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut coords: Vec<usize> = (0..n).map(|_| rng.below(grad.len())).collect();
    let argmax = grad
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    coords.push(argmax);
    coords.sort_unstable();
    coords.dedup();
    coords
}

/// Full model plus weighted loss on a `(2, 3, 28, 28)` batch in training mode.
/// Dropout masks are pinned by reseeding before every forward.
pub fn check_model(
    spec: &ModelSpec,
    params: &ParamStore<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    weights: &ClassWeights,
    cfg: &GradCheckConfig,
) -> Result<Vec<CheckResult>> {
    let dropout_seed = cfg.seed ^ 0x5EED;
    let objective = |p: &ParamStore<f64>, x: &Tensor<f64>| -> (f64, u64) {
        let (probs, trace) =
            model_forward(spec, p, x, Mode::Training, &mut Rng::new(dropout_seed)).unwrap();
        (
            weighted_cce_labels(&probs, labels, weights).unwrap().loss,
            trace.activation_fingerprint(),
        )
    };
    let (probs, trace) = model_forward(
        spec,
        params,
        batch,
        Mode::Training,
        &mut Rng::new(dropout_seed),
    )?;
    let loss = weighted_cce_labels(&probs, labels, weights)?;
    let grads = model_backward(spec, params, &trace, OutputGrad::Logits(loss.grad_logits))?;

    let mut rng = Rng::new(cfg.seed ^ 6);
    let names = params.trainable_names(spec);
    let mut out = Vec::new();
    let mut work = params.clone();
    let analytic: Vec<Tensor<f64>> = grads.tensors().into_iter().cloned().collect();
    for (ti, name) in names.iter().enumerate() {
        let coords = sample_coords(&analytic[ti], cfg.model_samples, &mut rng);
        let mut tensor = work.trainable()[ti].clone();
        let r = check_all(
            format!("model.{name}"),
            "model",
            &mut tensor,
            &analytic[ti],
            &coords,
            cfg,
            &mut |t| {
                *work.trainable_mut()[ti] = t.clone();
                objective(&work, batch)
            },
        );
        *work.trainable_mut()[ti] = params.trainable()[ti].clone();
        out.push(r);
    }
    let coords = sample_coords(&grads.input, cfg.model_samples, &mut rng);
    let mut x = batch.clone();
    out.push(check_all(
        "model.input".into(),
        "model",
        &mut x,
        &grads.input,
        &coords,
        cfg,
        &mut |xx| objective(params, xx),
    ));
    Ok(out)
}

fn full_model_check(cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    let spec = ModelSpec::lesion(LesionModelOptions::default());
    let mut rng = Rng::new(cfg.seed ^ 7);
    let params = ParamStore::<f64>::init(&spec, &mut rng)?;
    let batch = Tensor::from_vec(&[2, 3, 28, 28], rng.normal_vec(0.0, 1.0, 2 * 3 * 28 * 28)?)?;
    check_model(
        &spec,
        &params,
        &batch,
        &[5, 4],
        &crate::dataset::nv_half_class_weights(),
        cfg,
    )
}

/// Runs the checks for one group name, or every group for `"all"`.
pub fn run_suite(group: &str, cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    if group != "all" && !GROUPS.contains(&group) {
        return arg_err(format!(
            "unknown gradient-check group {group:?}; expected all or one of {GROUPS:?}"
        ));
    }
    let wants = |g: &str| group == "all" || group == g;
    let mut out = Vec::new();
    if wants("conv2d") {
        out.extend(check_conv(cfg));
    }
    if wants("max_pooling2d") {
        out.extend(check_pool(cfg));
    }
    if wants("batch_normalization") {
        out.extend(check_batchnorm(cfg));
    }
    if wants("dropout") {
        out.extend(check_dropout(cfg));
    }
    if wants("dense") {
        out.extend(check_dense(cfg));
    }
    if wants("softmax_cce") {
        out.extend(check_softmax_cce(cfg));
    }
    if wants("model") {
        out.extend(full_model_check(cfg)?);
    }
    Ok(out)
}
