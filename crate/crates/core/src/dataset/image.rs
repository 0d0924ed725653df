use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "bmp", "tif"];

/// Box-filter resample of an interleaved RGB8 buffer to `(3, th, tw)` in
/// `[0, 1]`. Every output pixel is the coverage-weighted mean of the source
/// area it spans, which preserves constant images exactly up to rounding.
pub fn area_resize(rgb: &[u8], width: usize, height: usize, tw: usize, th: usize) -> Vec<f32> {
    assert_eq!(rgb.len(), width * height * 3);
    // Per-axis list of (source index, weight) for each output coordinate.
    fn spans(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
                let mut v = Vec::new();
                let mut i = a.floor() as usize;
                while (i as f64) < b && i < src {
                    let w = (b.min(i as f64 + 1.0) - a.max(i as f64)) / scale;
                    if w > 0.0 {
                        v.push((i, w));
                    }
                    i += 1;
                }
                v
            })
            .collect()
    }
    let xs = spans(width, tw);
    let ys = spans(height, th);
    let mut out = vec![0f32; 3 * tw * th];
    for (oy, yspan) in ys.iter().enumerate() {
        for (ox, xspan) in xs.iter().enumerate() {
            let mut acc = [0f64; 3];
            for &(iy, wy) in yspan {
                for &(ix, wx) in xspan {
                    let p = &rgb[(iy * width + ix) * 3..][..3];
                    for c in 0..3 {
                        acc[c] += wy * wx * p[c] as f64;
                    }
                }
            }
            for c in 0..3 {
                out[(c * th + oy) * tw + ox] = (acc[c] / 255.0).clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// Decodes an image file and area-resizes it to `(3, size, size)`, scaled to `[0, 1]`.
pub fn decode_and_resize(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: "empty image".into(),
        });
    }
    Tensor::from_vec(
        &[3, size, size],
        area_resize(rgb.as_raw(), w, h, size, size),
    )
}

/// Per-channel standardization fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Fits on `(3, H, W)` images with values in `[0, 1]`.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut count = 0usize;
        for img in images {
            let plane = img.len() / 3;
            for c in 0..3 {
                for &v in &img.data()[c * plane..(c + 1) * plane] {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            count += plane;
        }
        if count == 0 {
            return Self::identity();
        }
        let mut out = Self::identity();
        for c in 0..3 {
            let m = sum[c] / count as f64;
            let var = (sq[c] / count as f64 - m * m).max(0.0);
            out.mean[c] = m as f32;
            // Flat channels keep unit scale.
            out.std[c] = if var.sqrt() > 1e-6 {
                var.sqrt() as f32
            } else {
                1.0
            };
        }
        out
    }

    pub fn apply(&self, img: &Tensor<f32>) -> Tensor<f32> {
        let plane = img.len() / 3;
        let mut out = img.clone();
        for c in 0..3 {
            for v in &mut out.data_mut()[c * plane..(c + 1) * plane] {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    /// Per-channel image of the raw `[0, 1]` pixel range.
    pub fn bounds(&self) -> [(f32, f32); 3] {
        std::array::from_fn(|c| {
            (
                (0.0 - self.mean[c]) / self.std[c],
                (1.0 - self.mean[c]) / self.std[c],
            )
        })
    }
}

/// Maps image ids to files under a data directory, searching it and its
/// immediate subdirectories (HAM10000 ships two image folders).
#[derive(Debug, Clone, Default)]
pub struct ImageIndex {
    paths: HashMap<String, PathBuf>,
}

impl ImageIndex {
    pub fn scan(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("image directory {} not found", dir.display()),
            )));
        }
        let mut paths = HashMap::new();
        for entry in walkdir::WalkDir::new(dir).max_depth(2).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Io(std::io::Error::other(e)))?;
            let p = entry.path();
            let ext_ok = p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if entry.file_type().is_file() && ext_ok {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    paths
                        .entry(stem.to_string())
                        .or_insert_with(|| p.to_path_buf());
                }
            }
        }
        Ok(Self { paths })
    }

    pub fn get(&self, image_id: &str) -> Option<&Path> {
        self.paths.get(image_id).map(PathBuf::as_path)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}
