//! Ground-truth heatmap rendering and the mean-squared supervision signal.
//!
//! Targets are unnormalized Gaussian bumps, one channel per joint, evaluated
//! at pixel centers in the heatmap frame. They are confidences, not a
//! probability distribution; normalization happens only inside the integral
//! decoder.

use crate::keypoints::{KeypointSet, NUM_JOINTS};
use crate::{Error, Result};
use ndarray::Array3;

/// K score maps over one shared grid. Channel k belongs to joint k in the
/// fixed channel order. Ground truth lives in [0,1]; model predictions are
/// unconstrained reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Array3<f64>,
}

impl Heatmap {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (k, h, w) = values.dim();
        if k < 1 || h < 1 || w < 1 {
            return Err(Error::contract(format!("empty heatmap {k}x{h}x{w}")));
        }
        Ok(Heatmap { values })
    }

    pub fn num_joints(&self) -> usize {
        self.values.dim().0
    }

    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }
}

/// Spread of the rendered ground-truth bump, in heatmap pixels.
///
/// The crate-wide training default is sigma = 2.0. Narrower bumps are legal,
/// but below sigma ~ 1.5 the grid under-samples the Gaussian and sub-pixel
/// decoding degrades measurably (see the decoding chapter of the guide).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::contract(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(GaussianSpec { sigma })
    }
}

/// Default training-target spread, heatmap pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Joints farther outside the grid than this many sigmas are treated as
/// invisible rather than rendered.
const RENDER_MARGIN_SIGMAS: f64 = 3.0;

/// True for joints that are visible and close enough to the grid to render.
pub fn renderable_mask(
    keypoints: &KeypointSet,
    height: usize,
    width: usize,
    spec: GaussianSpec,
) -> [bool; NUM_JOINTS] {
    let m = RENDER_MARGIN_SIGMAS * spec.sigma;
    let mut mask = [false; NUM_JOINTS];
    for (i, j) in keypoints.joints.iter().enumerate() {
        mask[i] = j.visible
            && j.x >= -m
            && j.x <= (width as f64 - 1.0) + m
            && j.y >= -m
            && j.y <= (height as f64 - 1.0) + m;
    }
    mask
}

/// Renders per-joint Gaussian targets on an `height`x`width` grid. Keypoints
/// are already in the heatmap frame. Channel k holds
/// exp(-((x-xk)^2 + (y-yk)^2) / (2 sigma^2)) for renderable joints and is
/// identically zero otherwise.
pub fn render_targets(
    keypoints: &KeypointSet,
    height: usize,
    width: usize,
    spec: GaussianSpec,
) -> Result<Heatmap> {
    if height < 1 || width < 1 {
        return Err(Error::contract("heatmap dimensions must be positive"));
    }
    let mask = renderable_mask(keypoints, height, width, spec);
    let inv_two_sigma_sq = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mut values = Array3::zeros((NUM_JOINTS, height, width));
    for (k, joint) in keypoints.joints.iter().enumerate() {
        if !mask[k] {
            continue;
        }
        for y in 0..height {
            let dy = y as f64 - joint.y;
            for x in 0..width {
                let dx = x as f64 - joint.x;
                values[[k, y, x]] = (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();
            }
        }
    }
    Ok(Heatmap { values })
}

/// Per-joint mean squared error plus the mean over joints.
/// MSE_k = (1/m) sum_n (pred_kn - target_kn)^2 with m = Hh*Wh.
pub fn mse_loss(pred: &Heatmap, target: &Heatmap) -> Result<(Vec<f64>, f64)> {
    if pred.values.dim() != target.values.dim() {
        return Err(Error::contract(format!(
            "heatmap shape mismatch: {:?} vs {:?}",
            pred.values.dim(),
            target.values.dim()
        )));
    }
    let (k, h, w) = pred.values.dim();
    let m = (h * w) as f64;
    let mut per_joint = Vec::with_capacity(k);
    for ch in 0..k {
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                let d = pred.values[[ch, y, x]] - target.values[[ch, y, x]];
                acc += d * d;
            }
        }
        per_joint.push(acc / m);
    }
    let mean = per_joint.iter().sum::<f64>() / k as f64;
    Ok((per_joint, mean))
}

/// Gradient of the joint-mean MSE with respect to `pred`:
/// d(mean)/d(pred_kn) = (2 / (m*K)) (pred_kn - target_kn).
pub fn mse_loss_grad(pred: &Heatmap, target: &Heatmap) -> Result<Array3<f64>> {
    if pred.values.dim() != target.values.dim() {
        return Err(Error::contract("heatmap shape mismatch"));
    }
    let (k, h, w) = pred.values.dim();
    let scale = 2.0 / ((h * w) as f64 * k as f64);
    Ok((&pred.values - &target.values) * scale)
}
