//! Training-time augmentation of `(3, H, W)` images.
//!
//! Steps run in a fixed order: horizontal flip, vertical flip, rotation,
//! brightness shift, center zoom, then a clamp to the valid value range.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    pub max_rotation_deg: f64,
    /// Brightness shift range, as a fraction of each channel's value range.
    pub brightness_delta: f64,
    /// Largest fraction of the image trimmed by the center zoom.
    pub zoom_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            max_rotation_deg: 15.0,
            brightness_delta: 0.1,
            zoom_max: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            max_rotation_deg: 0.0,
            brightness_delta: 0.0,
            zoom_max: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_horizontal", self.flip_horizontal),
            ("flip_vertical", self.flip_vertical),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return arg_err(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return arg_err(format!(
                "max rotation {} outside [0, 180]",
                self.max_rotation_deg
            ));
        }
        if !(0.0..=1.0).contains(&self.brightness_delta) {
            return arg_err(format!(
                "brightness delta {} outside [0, 1]",
                self.brightness_delta
            ));
        }
        if !(0.0..0.5).contains(&self.zoom_max) {
            return arg_err(format!("zoom {} outside [0, 0.5)", self.zoom_max));
        }
        Ok(())
    }
}

/// Per-channel inclusive value range.
pub type Bounds = [(f32, f32); 3];

pub const UNIT_BOUNDS: Bounds = [(0.0, 1.0); 3];

fn dims(img: &Tensor<f32>) -> (usize, usize, usize) {
    let s = img.shape();
    assert_eq!(s.len(), 3, "augmentation works on (C, H, W) images");
    (s[0], s[1], s[2])
}

pub fn flip_horizontal(img: &Tensor<f32>) -> Tensor<f32> {
    let (_, _, w) = dims(img);
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

pub fn flip_vertical(img: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let mut out = img.clone();
    let src = img.data();
    for ch in 0..c {
        for y in 0..h {
            let from = &src[(ch * h + h - 1 - y) * w..][..w];
            out.data_mut()[(ch * h + y) * w..][..w].copy_from_slice(from);
        }
    }
    out
}

/// Bilinear sample with edge replication.
fn sample(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let p = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Resamples every output pixel from `map(y, x)` in source coordinates.
fn remap(img: &Tensor<f32>, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let mut out = img.clone();
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y as f64, x as f64);
                out.data_mut()[(ch * h + y) * w + x] = sample(plane, h, w, sy, sx);
            }
        }
    }
    out
}

/// Rotation about the image center (counter-clockwise for positive angles
/// in a y-down frame), inverse-mapped with bilinear sampling and edge fill.
pub fn rotate(img: &Tensor<f32>, angle_deg: f64) -> Tensor<f32> {
    let (_, h, w) = dims(img);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = angle_deg.to_radians().sin_cos();
    remap(img, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy - s * dx + c * dy, cx + c * dx + s * dy)
    })
}

/// Crops the central `(1 - fraction)` of the image and scales it back up.
pub fn center_zoom(img: &Tensor<f32>, fraction: f64) -> Tensor<f32> {
    let (_, h, w) = dims(img);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let k = 1.0 - fraction;
    remap(img, |y, x| (cy + (y - cy) * k, cx + (x - cx) * k))
}

/// Adds `delta * (hi - lo)` to every value of each channel.
pub fn shift_brightness(img: &Tensor<f32>, delta: f64, bounds: &Bounds) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let mut out = img.clone();
    for ch in 0..c {
        let (lo, hi) = bounds[ch.min(2)];
        let shift = (delta * (hi - lo) as f64) as f32;
        for v in &mut out.data_mut()[ch * h * w..][..h * w] {
            *v += shift;
        }
    }
    out
}

fn clamp(img: &mut Tensor<f32>, bounds: &Bounds) {
    let (c, h, w) = dims(img);
    for ch in 0..c {
        let (lo, hi) = bounds[ch.min(2)];
        for v in &mut img.data_mut()[ch * h * w..][..h * w] {
            *v = v.clamp(lo, hi);
        }
    }
}

pub fn augment(
    img: &Tensor<f32>,
    config: &AugmentConfig,
    bounds: &Bounds,
    rng: &mut Rng,
) -> Tensor<f32> {
    let mut out = img.clone();
    if rng.bernoulli(config.flip_horizontal) {
        out = flip_horizontal(&out);
    }
    if rng.bernoulli(config.flip_vertical) {
        out = flip_vertical(&out);
    }
    let angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
    if angle != 0.0 {
        out = rotate(&out, angle);
    }
    let delta = rng.uniform(-config.brightness_delta, config.brightness_delta);
    if delta != 0.0 {
        out = shift_brightness(&out, delta, bounds);
    }
    let zoom = rng.uniform(0.0, config.zoom_max);
    if zoom != 0.0 {
        out = center_zoom(&out, zoom);
    }
    clamp(&mut out, bounds);
    out
}
