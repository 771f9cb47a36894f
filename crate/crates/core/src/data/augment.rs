use std::collections::BTreeMap;

use rand::Rng;

use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Largest rotation magnitude in degrees.
pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const FLIP_PROBABILITY: f64 = 0.5;

/// Decoded image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample<T> {
    /// `[C, H, W]`, values in `[0, 1]`.
    pub pixels: Tensor<T>,
    pub expression: usize,
    /// Attribute name to value index.
    pub attrs: BTreeMap<String, usize>,
}

/// Mirror every row of a `[C, H, W]` image.
pub fn hflip<T: Scalar>(pixels: &Tensor<T>) -> Tensor<T> {
    let w = *pixels.shape().last().expect("image has a width");
    let mut out = pixels.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

/// Rotate a `[C, H, W]` image counter-clockwise by `degrees` about its
/// center, bilinear sampling with edge replication. Angle 0 is an exact copy.
pub fn rotate<T: Scalar>(pixels: &Tensor<T>, degrees: f64) -> Tensor<T> {
    if degrees == 0.0 {
        return pixels.clone();
    }
    let s = pixels.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let src = pixels.data();
    let mut out = Tensor::zeros(s);
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse map: rotate the output coordinate back by -degrees
            let sx = (cos * dx - sin * dy + cx).clamp(0.0, (w - 1) as f64);
            let sy = (sin * dx + cos * dy + cy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(ch * h + yy) * w + xx].as_f64();
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                dst[(ch * h + y) * w + x] = lit((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Flip with probability one half (a uniform draw below 0.5), then rotate by
/// a uniform angle in `[-15, 15]` degrees. Labels are untouched.
pub fn augment<T: Scalar, R: Rng + ?Sized>(sample: &ImageSample<T>, rng: &mut R) -> ImageSample<T> {
    let flip = rng.random::<f64>() < FLIP_PROBABILITY;
    let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    ImageSample {
        pixels: augment_pixels(&sample.pixels, flip, angle),
        expression: sample.expression,
        attrs: sample.attrs.clone(),
    }
}

/// The deterministic part of [`augment`].
pub fn augment_pixels<T: Scalar>(pixels: &Tensor<T>, flip: bool, degrees: f64) -> Tensor<T> {
    let p = if flip { hflip(pixels) } else { pixels.clone() };
    rotate(&p, degrees)
}
