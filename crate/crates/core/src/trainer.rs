//! Training loop, evaluation, prediction and history output.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::checkpoint::{class_codes, save_checkpoint, Checkpoint};
use crate::dataset::{self, area_resize, decode_and_resize, ClassLabel, Dataset, Split};
use crate::error::{arg_err, Error, Result};
use crate::io_util::write_atomic;
use crate::metrics::{confusion, report, roc_ovr, ClassificationReport, ConfusionMatrix, RocSet};
use crate::nn::{
    apply_moving_stats, model_backward, model_forward, ActShape, LesionModelOptions, Mode,
    ModelSpec, OutputGrad, ParamStore, INPUT_SIZE, NUM_CLASSES,
};
use crate::optim::{
    weighted_cce_labels, AdamConfig, AdamState, ClassWeights, PlateauConfig, PlateauScheduler,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

const KEY_INIT: u64 = 0x1417;
const KEY_SHUFFLE: u64 = 0x5_4FF1E;
const KEY_AUGMENT: u64 = 0xA06;
const KEY_DROPOUT: u64 = 0xD809;

/// Samples per inference forward pass.
const EVAL_CHUNK: usize = 128;

pub const CHECKPOINT_FILE: &str = "best.dfn";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeightMode {
    NvHalf,
    Uniform,
}

impl ClassWeightMode {
    pub fn weights(self) -> ClassWeights {
        match self {
            Self::NvHalf => dataset::nv_half_class_weights(),
            Self::Uniform => ClassWeights::uniform(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub class_weight_mode: ClassWeightMode,
    pub augment: AugmentConfig,
    pub scheduler: PlateauConfig,
    pub adam: AdamConfig,
    /// Seeded record subset the dataset was drawn from, if any.
    pub subset: Option<usize>,
    /// Where the best checkpoint and running history are written, if anywhere.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 90,
            initial_lr: 0.001,
            val_fraction: 0.1,
            seed: 0,
            class_weight_mode: ClassWeightMode::NvHalf,
            augment: AugmentConfig::default(),
            scheduler: PlateauConfig::default(),
            adam: AdamConfig::default(),
            subset: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return arg_err("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return arg_err("batch size must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return arg_err(format!(
                "validation fraction {} must lie in (0, 1)",
                self.val_fraction
            ));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return arg_err(format!(
                "learning rate {} must be finite and non-negative",
                self.initial_lr
            ));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Checkpoint,
    /// Parameters after the final epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Per-sample count of batches that contributed a gradient, indexed like `Dataset::samples`.
    pub gradient_visits: Vec<u32>,
    pub stopped_early: bool,
}

/// The architecture and the initial parameters a run with `seed` starts from.
pub fn init_model(seed: u64) -> Result<(ModelSpec, ParamStore<f32>)> {
    let spec = ModelSpec::lesion(LesionModelOptions::default());
    let params = ParamStore::init(&spec, &mut Rng::derive(seed, &[KEY_INIT]))?;
    Ok((spec, params))
}

/// Batches per epoch with the final partial batch kept.
pub fn batches_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    train_with(config, data, &mut |_| ControlFlow::Continue(()))
}

/// Like [`train`], calling `on_epoch` after every completed epoch. Returning
/// `Break` ends the run after that epoch.
pub fn train_with(
    config: &TrainConfig,
    data: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return arg_err("training split is empty");
    }
    if data.val.is_empty() {
        return arg_err("validation split is empty");
    }
    let (spec, mut params) = init_model(config.seed)?;
    let mut adam = AdamState::new(&params.trainable(), config.adam);
    let mut sched = PlateauScheduler::new(PlateauConfig {
        initial_lr: config.initial_lr,
        ..config.scheduler
    });
    let weights = config.class_weight_mode.weights();
    let bounds = data.norm.bounds();

    let snapshot = |params: &ParamStore<f32>, epoch: usize, loss: f64| Checkpoint {
        spec: spec.clone(),
        params: params.clone(),
        norm: data.norm,
        config: config.clone(),
        epoch,
        best_val_loss: loss,
        classes: class_codes(),
    };

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut visits = vec![0u32; data.samples.len()];
    let mut best: Option<Checkpoint> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = sched.current_lr();
        let mut order = data.train.clone();
        Rng::derive(config.seed, &[KEY_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let images: Vec<Tensor<f32>> = idx
                .par_iter()
                .map(|&i| {
                    let mut rng = Rng::derive(config.seed, &[KEY_AUGMENT, epoch as u64, i as u64]);
                    augment(&data.samples[i].image, &config.augment, &bounds, &mut rng)
                })
                .collect();
            let (x, labels) = dataset::stack(
                images.iter(),
                idx.iter().map(|&i| data.samples[i].label.index()),
            )?;
            let mut drop_rng = Rng::derive(config.seed, &[KEY_DROPOUT, epoch as u64, b as u64]);
            let (probs, trace) = model_forward(&spec, &params, &x, Mode::Training, &mut drop_rng)?;
            let out = weighted_cce_labels(&probs, &labels, &weights)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b + 1,
                    value: out.loss,
                });
            }
            let grads =
                model_backward(&spec, &params, &trace, OutputGrad::Logits(out.grad_logits))?;
            adam.step(&mut params.trainable_mut(), &grads.tensors(), lr)?;
            apply_moving_stats(&spec, &mut params, &trace)?;
            if !params.all_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b + 1,
                    value: f64::NAN,
                });
            }
            for &i in idx {
                visits[i] += 1;
            }
            loss_sum += out.loss * idx.len() as f64;
            correct += argmax_rows(&probs)
                .iter()
                .zip(&labels)
                .filter(|(p, t)| p == t)
                .count();
        }

        let val = infer_split(&spec, &params, data, Split::Validation)?;
        let val_loss = mean_cce(&val.probs, &val.labels)?;
        let val_accuracy = accuracy(&val.probs, &val.labels);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss,
            val_accuracy,
            learning_rate: lr,
            wall_time: started.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|b| val_loss < b.best_val_loss) {
            let cp = snapshot(&params, epoch, val_loss);
            if let Some(dir) = &config.out_dir {
                save_checkpoint(&cp, &dir.join(CHECKPOINT_FILE))?;
            }
            best = Some(cp);
        }
        history.push(record);
        if let Some(dir) = &config.out_dir {
            write_atomic(&dir.join(HISTORY_FILE), history_csv(&history).as_bytes())?;
        }
        if on_epoch(history.last().unwrap()).is_break() {
            break;
        }
        sched.update(val_loss);
        if sched.exhausted() {
            stopped_early = epoch < config.epochs;
            break;
        }
    }

    let last_epoch = history.len();
    let best = best.expect("at least one epoch ran");
    let last = snapshot(&params, last_epoch, best.best_val_loss);
    Ok(TrainOutcome {
        best,
        last,
        history,
        gradient_visits: visits,
        stopped_early,
    })
}

struct Inferred {
    probs: Tensor<f64>,
    labels: Vec<usize>,
}

fn infer_split(
    spec: &ModelSpec,
    params: &ParamStore<f32>,
    data: &Dataset,
    split: Split,
) -> Result<Inferred> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return arg_err(format!("{split:?} split is empty"));
    }
    let mut probs = Vec::with_capacity(idx.len() * NUM_CLASSES);
    let mut labels = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, l) = data.batch(chunk)?;
        let (p, _) = model_forward(spec, params, &x, Mode::Inference, &mut Rng::new(0))?;
        probs.extend(p.data().iter().map(|&v| v as f64));
        labels.extend(l);
    }
    Ok(Inferred {
        probs: Tensor::from_vec(&[idx.len(), NUM_CLASSES], probs)?,
        labels,
    })
}

/// Unweighted mean cross-entropy, the quantity the scheduler and checkpoint
/// selection track.
fn mean_cce(probs: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    Ok(weighted_cce_labels(probs, labels, &ClassWeights::uniform())?.loss)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: crate::tensor::Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.shape()[probs.rank() - 1];
    probs
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}

fn accuracy(probs: &Tensor<f64>, labels: &[usize]) -> f64 {
    let hits = argmax_rows(probs)
        .iter()
        .zip(labels)
        .filter(|(p, t)| p == t)
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: ClassificationReport,
    pub confusion: ConfusionMatrix,
    pub roc: RocSet,
    /// Unweighted mean cross-entropy over the split.
    pub loss: f64,
}

fn check_compatible(cp: &Checkpoint) -> Result<()> {
    let input = ActShape::Image {
        channels: 3,
        height: INPUT_SIZE,
        width: INPUT_SIZE,
    };
    if cp.spec.input != input {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects input {}, this build feeds {input}",
            cp.spec.input
        )));
    }
    match cp.spec.num_classes() {
        Ok(NUM_CLASSES) => {}
        Ok(k) => {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {k} outputs, expected {NUM_CLASSES}"
            )))
        }
        Err(e) => return Err(Error::Checkpoint(e.to_string())),
    }
    if cp.classes != class_codes() {
        return Err(Error::Checkpoint(format!(
            "unexpected class mapping {:?}",
            cp.classes
        )));
    }
    Ok(())
}

pub fn evaluate(cp: &Checkpoint, data: &Dataset, split: Split) -> Result<Evaluation> {
    check_compatible(cp)?;
    if data.norm != cp.norm {
        return arg_err("dataset was normalized with statistics other than the checkpoint's");
    }
    let inf = infer_split(&cp.spec, &cp.params, data, split)?;
    let cm = confusion(&argmax_rows(&inf.probs), &inf.labels)?;
    Ok(Evaluation {
        report: report(&cm)?,
        confusion: cm,
        roc: roc_ovr(&inf.probs, &inf.labels)?,
        loss: mean_cce(&inf.probs, &inf.labels)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ClassLabel,
    pub probs: [f32; NUM_CLASSES],
}

/// Classifies a `(3, 28, 28)` image with values in `[0, 1]`.
pub fn predict_tensor(cp: &Checkpoint, image: &Tensor<f32>) -> Result<Prediction> {
    check_compatible(cp)?;
    let x = cp
        .norm
        .apply(image)
        .reshape(&[1, 3, INPUT_SIZE, INPUT_SIZE])?;
    let (p, _) = model_forward(&cp.spec, &cp.params, &x, Mode::Inference, &mut Rng::new(0))?;
    let idx = argmax_rows(&p)[0];
    let mut probs = [0f32; NUM_CLASSES];
    probs.copy_from_slice(p.data());
    Ok(Prediction {
        label: ClassLabel::from_index(idx).expect("argmax below NUM_CLASSES"),
        probs,
    })
}

pub fn predict(cp: &Checkpoint, image_path: &Path) -> Result<Prediction> {
    predict_tensor(cp, &decode_and_resize(image_path, INPUT_SIZE)?)
}

/// Classifies packed 8-bit RGB pixels, row-major.
pub fn predict_rgb(cp: &Checkpoint, rgb: &[u8], width: usize, height: usize) -> Result<Prediction> {
    if width == 0 || height == 0 || rgb.len() != width * height * 3 {
        return arg_err(format!(
            "{} bytes do not form a {width}x{height} RGB image",
            rgb.len()
        ));
    }
    let img = Tensor::from_vec(
        &[3, INPUT_SIZE, INPUT_SIZE],
        area_resize(rgb, width, height, INPUT_SIZE, INPUT_SIZE),
    )?;
    predict_tensor(cp, &img)
}

/// `epoch,train_loss,train_acc,val_loss,val_acc,lr`. Wall time is left out
/// so that runs with the same seed produce identical files.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
    for r in history {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.learning_rate
        )
        .unwrap();
    }
    s
}

/// Accuracy and loss curves side by side.
pub fn history_svg(history: &[EpochRecord]) -> String {
    const W: f64 = 360.0;
    const H: f64 = 240.0;
    const PAD: f64 = 36.0;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif" font-size="11">"#, 2.0 * W).unwrap();
    let panels: [(&str, fn(&EpochRecord) -> f64, fn(&EpochRecord) -> f64); 2] = [
        ("accuracy", |r| r.train_accuracy, |r| r.val_accuracy),
        ("loss", |r| r.train_loss, |r| r.val_loss),
    ];
    let n = history.len().max(2) as f64 - 1.0;
    for (p, (title, train, val)) in panels.iter().enumerate() {
        let x0 = p as f64 * W;
        let vals: Vec<f64> = history.iter().flat_map(|r| [train(r), val(r)]).collect();
        let lo = if *title == "accuracy" {
            0.0
        } else {
            0.0f64.min(vals.iter().cloned().fold(f64::INFINITY, f64::min))
        };
        let hi = vals.iter().cloned().fold(
            if *title == "accuracy" {
                1.0
            } else {
                f64::MIN_POSITIVE
            },
            f64::max,
        );
        let px = |i: usize| x0 + PAD + (W - 2.0 * PAD) * i as f64 / n;
        let py = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo).max(1e-12);
        writeln!(
            s,
            r##"<rect x="{}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
            x0 + PAD,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{title} vs epoch</text>"#,
            x0 + W / 2.0,
            PAD - 12.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}">{hi:.3}</text><text x="{}" y="{}">{lo:.3}</text>"#,
            x0 + 2.0,
            PAD + 4.0,
            x0 + 2.0,
            H - PAD
        )
        .unwrap();
        for (f, color, name) in [(train, "#1f77b4", "train"), (val, "#ff7f0e", "val")] {
            let pts: Vec<String> = history
                .iter()
                .enumerate()
                .map(|(i, r)| format!("{:.2},{:.2}", px(i), py(f(r))))
                .collect();
            writeln!(
                s,
                r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##,
                pts.join(" ")
            )
            .unwrap();
            let ly = if name == "train" { H - 12.0 } else { H - 2.0 };
            writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#,
                x0 + PAD
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Loads a dataset for evaluating `cp`, reusing its normalization and split settings.
pub fn dataset_for_checkpoint(
    cp: &Checkpoint,
    data_dir: &Path,
    records: &[dataset::MetadataRecord],
) -> Result<Dataset> {
    let opts = dataset::LoadOptions {
        val_fraction: cp.config.val_fraction,
        seed: cp.config.seed,
        subset: cp.config.subset,
        norm: Some(cp.norm),
    };
    Dataset::load(data_dir, records, &opts)
}
