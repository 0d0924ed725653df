//! Synthetic lesion-like images in the HAM10000 directory layout, for tests
//! and demos when the real dataset is not available.
//!
//! Each class draws a dark elliptical lesion on a skin-toned background. The
//! class sets the lesion's color and shape; position, size, orientation,
//! tint and pixel noise vary per image.

use std::path::Path;

use crate::dataset::{write_metadata, ClassLabel, MetadataRecord, HAM10000_CLASS_COUNTS};
use crate::error::{Error, Result};
use crate::rng::Rng;

const LOCALIZATIONS: [&str; 8] = [
    "back",
    "lower extremity",
    "trunk",
    "upper extremity",
    "abdomen",
    "face",
    "chest",
    "scalp",
];

// (r, g, b) lesion color and (aspect, ring) shape per class.
const PALETTE: [[f64; 3]; 7] = [
    [0.75, 0.35, 0.30],
    [0.85, 0.55, 0.60],
    [0.55, 0.40, 0.25],
    [0.65, 0.50, 0.45],
    [0.20, 0.12, 0.15],
    [0.45, 0.30, 0.20],
    [0.70, 0.10, 0.25],
];
const SHAPE: [(f64, bool); 7] = [
    (1.6, false),
    (1.0, true),
    (1.3, false),
    (1.0, false),
    (1.2, true),
    (1.0, false),
    (1.8, true),
];

#[derive(Debug, Clone, Copy)]
pub struct SyntheticOptions {
    pub width: u32,
    pub height: u32,
    /// Standard deviation of per-pixel noise, in [0, 1] pixel units.
    pub noise: f64,
    /// How far each lesion's color may drift toward a random palette entry.
    pub color_jitter: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            width: 60,
            height: 45,
            noise: 0.06,
            color_jitter: 0.25,
        }
    }
}

/// Interleaved RGB8 image for one synthetic lesion.
pub fn render(label: ClassLabel, opts: &SyntheticOptions, rng: &mut Rng) -> Vec<u8> {
    let (w, h) = (opts.width as usize, opts.height as usize);
    let skin = [
        0.85 + rng.uniform(-0.05, 0.05),
        0.68 + rng.uniform(-0.05, 0.05),
        0.58 + rng.uniform(-0.05, 0.05),
    ];
    let base = PALETTE[label.index()];
    let other = PALETTE[rng.below(7)];
    let mix = rng.uniform(0.0, opts.color_jitter);
    let color: Vec<f64> = (0..3)
        .map(|c| base[c] * (1.0 - mix) + other[c] * mix)
        .collect();
    let (aspect, ring) = SHAPE[label.index()];
    let cx = w as f64 * rng.uniform(0.4, 0.6);
    let cy = h as f64 * rng.uniform(0.4, 0.6);
    let radius = h as f64 * rng.uniform(0.22, 0.34);
    let theta = rng.uniform(0.0, std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = (dx * c + dy * s) / (radius * aspect);
            let v = (-dx * s + dy * c) / radius;
            let r = (u * u + v * v).sqrt();
            let inside = if ring { r < 1.0 && r > 0.45 } else { r < 1.0 };
            let edge = (1.0 - (r - 1.0).abs() * 4.0).clamp(0.0, 1.0) * 0.3;
            for ch in 0..3 {
                let mut val = if inside {
                    color[ch]
                } else {
                    skin[ch] * (1.0 - edge) + color[ch] * edge
                };
                val += rng.normal(0.0, opts.noise);
                out.push((val.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Metadata for a synthetic collection with `counts[c]` images of class `c`.
pub fn records(counts: &[usize; 7], seed: u64) -> Vec<MetadataRecord> {
    let mut rng = Rng::derive(seed, &[0x3E7A]);
    let mut out = Vec::new();
    let mut id = 0usize;
    for (ci, &n) in counts.iter().enumerate() {
        let label = ClassLabel::ALL[ci];
        for _ in 0..n {
            let dx_type = if label == ClassLabel::Nv {
                if rng.bernoulli(0.55) {
                    "follow_up"
                } else {
                    "histo"
                }
            } else if rng.bernoulli(0.85) {
                "histo"
            } else {
                "consensus"
            };
            let age = if rng.bernoulli(0.01) {
                None
            } else {
                Some((5 * (3 + rng.below(15))) as f64)
            };
            out.push(MetadataRecord {
                lesion_id: format!("HAM_{:07}", id / 2),
                image_id: format!("SYN_{id:07}"),
                dx: label,
                dx_type: dx_type.into(),
                age,
                sex: if rng.bernoulli(0.5) { "male" } else { "female" }.into(),
                localization: LOCALIZATIONS[rng.below(LOCALIZATIONS.len())].into(),
            });
            id += 1;
        }
    }
    out
}

/// Class counts with the HAM10000 class proportions scaled to `total`
/// (largest-remainder rounding, at least one image per class).
pub fn ham_proportions(total: usize) -> [usize; 7] {
    let all: usize = HAM10000_CLASS_COUNTS.iter().sum();
    let exact: Vec<f64> = HAM10000_CLASS_COUNTS
        .iter()
        .map(|&c| c as f64 * total as f64 / all as f64)
        .collect();
    let mut counts: [usize; 7] = std::array::from_fn(|i| (exact[i].floor() as usize).max(1));
    let mut order: Vec<usize> = (0..7).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut i = 0;
    while counts.iter().sum::<usize>() < total {
        counts[order[i % 7]] += 1;
        i += 1;
    }
    counts
}

/// Writes `metadata.csv` and one PNG per record under `dir/images`.
pub fn write_ham_layout(
    dir: &Path,
    counts: &[usize; 7],
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<Vec<MetadataRecord>> {
    let recs = records(counts, seed);
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir)?;
    for (i, r) in recs.iter().enumerate() {
        let mut rng = Rng::derive(seed, &[0x1316, i as u64]);
        let px = render(r.dx, opts, &mut rng);
        let img = ::image::RgbImage::from_raw(opts.width, opts.height, px)
            .expect("buffer matches dimensions");
        img.save(img_dir.join(format!("{}.png", r.image_id)))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    write_metadata(&recs, std::fs::File::create(dir.join("metadata.csv"))?)?;
    Ok(recs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions_sum_to_total() {
        for total in [40, 300, 1500, 10015] {
            let c = ham_proportions(total);
            assert_eq!(c.iter().sum::<usize>(), total);
            assert!(c.iter().all(|&v| v >= 1));
        }
        assert_eq!(ham_proportions(10015), HAM10000_CLASS_COUNTS);
    }

    #[test]
    fn render_is_deterministic() {
        let o = SyntheticOptions::default();
        let a = render(ClassLabel::Mel, &o, &mut Rng::new(3));
        let b = render(ClassLabel::Mel, &o, &mut Rng::new(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 60 * 45 * 3);
    }
}
