//! Data augmentation: random crop, color dither, rotation, applied in that
//! fixed order, with keypoints kept consistent with the pixels at every step.
//!
//! Cropping rejects any draw that would cut off a visible joint and redraws;
//! after 20 consecutive rejections the sample passes through unaugmented.
//! Rotation marks joints that leave the canvas as invisible rather than
//! clamping them onto the border.

use crate::geometry::{crop, BoxRegion, ImageBuffer};
use crate::training::Sample;
use crate::Result;
use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub random_crop: bool,
    pub color_dither: bool,
    pub rotation: bool,
    /// Crop side as a fraction of the original, drawn uniformly.
    pub crop_scale_range: (f64, f64),
    /// Per-channel intensity multiplier, drawn uniformly.
    pub dither_range: (f64, f64),
    /// Rotation angle in degrees, drawn uniformly from [-max, max].
    pub rotation_max_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            random_crop: true,
            color_dither: true,
            rotation: true,
            crop_scale_range: (0.75, 1.0),
            dither_range: (0.8, 1.2),
            rotation_max_deg: 25.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            random_crop: false,
            color_dither: false,
            rotation: false,
            ..AugmentConfig::default()
        }
    }
}

const CROP_ATTEMPTS: usize = 20;

/// Applies the enabled augmentations in order crop, dither, rotation. All
/// randomness comes from `rng`, so a fixed seed gives bit-identical output.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Sample> {
    let mut current = sample.clone();

    if cfg.random_crop {
        match cropped_keeping_joints(&current, cfg.crop_scale_range, rng)? {
            Some(s) => current = s,
            // 20 rejections: the sample passes through with no augmentation
            None => return Ok(sample.clone()),
        }
    }

    if cfg.color_dither {
        let (lo, hi) = cfg.dither_range;
        let scales = [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
        let image = current.image.map_clamped(|c, v| v * scales[c.min(2)]);
        current = Sample { image, keypoints: current.keypoints };
    }

    if cfg.rotation {
        let max = cfg.rotation_max_deg;
        let angle = rng.gen_range(-max..=max).to_radians();
        current = rotate_sample(&current, angle)?;
    }

    Ok(current)
}

fn cropped_keeping_joints(
    sample: &Sample,
    scale_range: (f64, f64),
    rng: &mut impl Rng,
) -> Result<Option<Sample>> {
    let (w, h) = (sample.image.width(), sample.image.height());
    for _ in 0..CROP_ATTEMPTS {
        let f = rng.gen_range(scale_range.0..=scale_range.1);
        let cw = ((w as f64 * f).round() as usize).clamp(1, w);
        let ch = ((h as f64 * f).round() as usize).clamp(1, h);
        let x0 = rng.gen_range(0..=(w - cw)) as f64;
        let y0 = rng.gen_range(0..=(h - ch)) as f64;
        let region = BoxRegion::new(x0, y0, cw as f64, ch as f64)?;
        let (image, to_original) = crop(&sample.image, &region)?;
        let kp = sample.keypoints.map_positions(|p| to_original.apply_inverse(p));
        let inside = kp.joints.iter().all(|j| {
            !j.visible
                || (j.x >= 0.0
                    && j.x <= image.width() as f64 - 1.0
                    && j.y >= 0.0
                    && j.y <= image.height() as f64 - 1.0)
        });
        if inside {
            return Ok(Some(Sample { image, keypoints: kp }));
        }
    }
    Ok(None)
}

/// Rotates one 2-D plane about its center by `angle` radians (positive turns
/// the +x axis toward +y in this y-down frame). Bilinear sampling, zero fill
/// outside the source.
pub fn rotate_plane(plane: &Array2<f64>, angle: f64) -> Array2<f64> {
    let (h, w) = plane.dim();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate the destination back by -angle
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if sx < -0.5 || sy < -0.5 || sx > w as f64 - 0.5 || sy > h as f64 - 0.5 {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let sample = |yy: f64, xx: f64| -> f64 {
                if yy < 0.0 || xx < 0.0 || yy > h as f64 - 1.0 || xx > w as f64 - 1.0 {
                    0.0
                } else {
                    plane[[yy as usize, xx as usize]]
                }
            };
            let v = sample(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + sample(y0, x0 + 1.0) * fx * (1.0 - fy)
                + sample(y0 + 1.0, x0) * (1.0 - fx) * fy
                + sample(y0 + 1.0, x0 + 1.0) * fx * fy;
            out[[y, x]] = v;
        }
    }
    out
}

/// Rotates a point about `center` by `angle` radians in the y-down frame.
pub fn rotate_point(p: (f64, f64), center: (f64, f64), angle: f64) -> (f64, f64) {
    let (sin, cos) = angle.sin_cos();
    let dx = p.0 - center.0;
    let dy = p.1 - center.1;
    (cos * dx - sin * dy + center.0, sin * dx + cos * dy + center.1)
}

fn rotate_sample(sample: &Sample, angle: f64) -> Result<Sample> {
    let (c, h, w) = sample.image.data().dim();
    let mut data = Array3::zeros((c, h, w));
    for ch in 0..c {
        let plane = sample.image.data().index_axis(ndarray::Axis(0), ch).to_owned();
        data.index_axis_mut(ndarray::Axis(0), ch).assign(&rotate_plane(&plane, angle));
    }
    // rounding noise from sin/cos can stray a hair outside [0,1]
    let image = ImageBuffer::new(data.mapv(|v| v.clamp(0.0, 1.0)))?;
    let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut kp = sample.keypoints.map_positions(|p| rotate_point(p, center, angle));
    for j in kp.joints.iter_mut() {
        if j.visible
            && !(j.x >= 0.0 && j.x <= w as f64 - 1.0 && j.y >= 0.0 && j.y <= h as f64 - 1.0)
        {
            j.visible = false;
        }
    }
    Ok(Sample { image, keypoints: kp })
}
