//! HAM10000 ingestion: metadata, image decoding, train/validation split and
//! the exploratory count tables.

mod image;
mod labels;
mod metadata;
pub mod synthetic;

use std::path::Path;

use rayon::prelude::*;

pub use self::image::{area_resize, decode_and_resize, ImageIndex, NormStats};
pub use labels::ClassLabel;
pub use metadata::{
    load_metadata, read_metadata, tabulate, write_metadata, CountTable, Facet, MetadataRecord,
};

use crate::error::{arg_err, Error, Result};
use crate::optim::ClassWeights;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 28;

/// Published per-class image counts of HAM10000, indexed by [`ClassLabel`].
pub const HAM10000_CLASS_COUNTS: [usize; 7] = [327, 514, 1099, 115, 1113, 6705, 142];

/// Melanocytic nevi at 0.5, every other class at 1.
pub fn nv_half_class_weights() -> ClassWeights {
    let mut w = [1.0; 7];
    w[ClassLabel::Nv.index()] = 0.5;
    ClassWeights(w)
}

/// The fixed class weighting, independent of the record mix.
pub fn class_weights_for(_records: &[MetadataRecord]) -> ClassWeights {
    nv_half_class_weights()
}

/// Number of validation items for `n` records, rounding half up.
pub fn validation_size(n: usize, val_fraction: f64) -> usize {
    (n as f64 * val_fraction).round() as usize
}

/// Seeded image-level split into `(train ids, validation ids)`.
///
/// Ids are sorted before shuffling, so the result depends only on the set of
/// ids and the seed, not on input order.
pub fn split(
    records: &[MetadataRecord],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return arg_err(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        ));
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.image_id.clone()).collect();
    ids.sort();
    Rng::derive(seed, &[0x5917]).shuffle(&mut ids);
    let n_val = validation_size(ids.len(), val_fraction);
    let val = ids.split_off(ids.len() - n_val);
    Ok((ids, val))
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// `(3, 28, 28)`, standardized with the dataset's [`NormStats`].
    pub image: Tensor<f32>,
    pub label: ClassLabel,
    pub image_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub norm: NormStats,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub val_fraction: f64,
    pub seed: u64,
    /// Keep a seeded random subset of this many records before splitting.
    pub subset: Option<usize>,
    /// Use these normalization statistics instead of fitting on the train split.
    pub norm: Option<NormStats>,
}

impl Dataset {
    /// Decodes every record's image and assembles the split. Normalization is
    /// fitted on training images only.
    pub fn load(data_dir: &Path, records: &[MetadataRecord], opts: &LoadOptions) -> Result<Self> {
        let mut records = records.to_vec();
        if let Some(n) = opts.subset {
            records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
            Rng::derive(opts.seed, &[0x5B5E7]).shuffle(&mut records);
            records.truncate(n);
        }
        if records.is_empty() {
            return arg_err("dataset has no records");
        }
        let index = ImageIndex::scan(data_dir)?;
        let raw: Vec<Tensor<f32>> = records
            .par_iter()
            .map(|r| {
                let path = index.get(&r.image_id).ok_or_else(|| {
                    Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!(
                            "no image file for {} under {}",
                            r.image_id,
                            data_dir.display()
                        ),
                    ))
                })?;
                decode_and_resize(path, IMAGE_SIZE)
            })
            .collect::<Result<_>>()?;
        Self::from_raw(&records, raw, opts)
    }

    /// Builds a dataset from already-decoded `[0, 1]` images, one per record.
    pub fn from_raw(
        records: &[MetadataRecord],
        raw: Vec<Tensor<f32>>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        if records.len() != raw.len() {
            return arg_err("one image per record is required");
        }
        if records.is_empty() {
            return arg_err("dataset has no records");
        }
        let (train_ids, val_ids) = split(records, opts.val_fraction, opts.seed)?;
        let pos: std::collections::HashMap<&str, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.image_id.as_str(), i))
            .collect();
        let train: Vec<usize> = train_ids.iter().map(|id| pos[id.as_str()]).collect();
        let val: Vec<usize> = val_ids.iter().map(|id| pos[id.as_str()]).collect();
        let norm = opts
            .norm
            .unwrap_or_else(|| NormStats::fit(train.iter().map(|&i| &raw[i])));
        let samples = records
            .iter()
            .zip(raw)
            .map(|(r, img)| Sample {
                image: norm.apply(&img),
                label: r.dx,
                image_id: r.image_id.clone(),
            })
            .collect();
        Ok(Self {
            samples,
            train,
            val,
            norm,
            seed: opts.seed,
        })
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.val,
        }
    }

    /// Stacks the given samples into an `(N, 3, 28, 28)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        stack(
            indices.iter().map(|&i| &self.samples[i].image),
            indices.iter().map(|&i| self.samples[i].label.index()),
        )
    }
}

pub fn stack<'a>(
    images: impl Iterator<Item = &'a Tensor<f32>>,
    labels: impl Iterator<Item = usize>,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        data.extend_from_slice(img.data());
        n += 1;
    }
    let labels: Vec<usize> = labels.collect();
    if n == 0 {
        return arg_err("empty batch");
    }
    Ok((
        Tensor::from_vec(&[n, 3, IMAGE_SIZE, IMAGE_SIZE], data)?,
        labels,
    ))
}
