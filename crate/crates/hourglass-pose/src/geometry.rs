//! Rasters, boxes, and exact coordinate mapping between image frames.
//!
//! Convention: origin at the top-left, x rightward, y downward, pixel centers
//! at integer coordinates. Every operation that changes the frame returns a
//! [`CoordTransform`] so keypoints can be carried along exactly, and mapped
//! back after decoding.

use crate::{Error, Result};
use ndarray::Array3;

/// Normalized raster, laid out channel-major `(C, H, W)`, intensities in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    data: Array3<f64>,
}

impl ImageBuffer {
    /// Wraps a `(C, H, W)` array. Channels must be 1 or 3, values in [0,1].
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if !(c == 1 || c == 3) {
            return Err(Error::contract(format!("channels must be 1 or 3, got {c}")));
        }
        if h < 1 || w < 1 {
            return Err(Error::contract(format!("empty image {h}x{w}")));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("intensities must lie in [0,1]"));
        }
        Ok(ImageBuffer { data })
    }

    /// 8-bit interleaved RGB (or gray) rows to normalized planes, v/255.
    pub fn from_u8(pixels: &[u8], height: usize, width: usize, channels: usize) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::contract("pixel buffer length mismatch"));
        }
        let mut data = Array3::zeros((channels, height, width));
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data[[c, y, x]] = pixels[(y * width + x) * channels + c] as f64 / 255.0;
                }
            }
        }
        ImageBuffer::new(data)
    }

    /// Interleaved 8-bit rows, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        let (c, h, w) = self.data.dim();
        let mut out = vec![0u8; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(y * w + x) * c + ch] = (self.data[[ch, y, x]] * 255.0).round() as u8;
                }
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Same raster with `f(v)` applied per value; clamped back to [0,1].
    pub fn map_clamped(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut data = self.data.clone();
        for ((c, _, _), v) in data.indexed_iter_mut() {
            *v = f(c, *v).clamp(0.0, 1.0);
        }
        ImageBuffer { data }
    }
}

/// Axis-aligned region, top-left anchored. Coordinates are real-valued so
/// expansion by fractional factors stays exact until a crop quantizes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxRegion {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::contract(format!(
                "box must have positive extent, got {width}x{height}"
            )));
        }
        Ok(BoxRegion { x0, y0, width, height })
    }
}

/// Affine frame change `p' = scale * p + offset`, per axis, no rotation.
/// Scales are positive, so every transform is invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordTransform {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl CoordTransform {
    pub fn new(scale_x: f64, scale_y: f64, offset_x: f64, offset_y: f64) -> Result<Self> {
        if !(scale_x > 0.0 && scale_y > 0.0) {
            return Err(Error::contract("transform scales must be positive"));
        }
        Ok(CoordTransform { scale_x, scale_y, offset_x, offset_y })
    }

    pub fn identity() -> Self {
        CoordTransform { scale_x: 1.0, scale_y: 1.0, offset_x: 0.0, offset_y: 0.0 }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (self.scale_x * p.0 + self.offset_x, self.scale_y * p.1 + self.offset_y)
    }

    pub fn apply_inverse(&self, p: (f64, f64)) -> (f64, f64) {
        ((p.0 - self.offset_x) / self.scale_x, (p.1 - self.offset_y) / self.scale_y)
    }

    /// The transform applying `self` first, then `next`.
    pub fn then(&self, next: &CoordTransform) -> CoordTransform {
        CoordTransform {
            scale_x: next.scale_x * self.scale_x,
            scale_y: next.scale_y * self.scale_y,
            offset_x: next.scale_x * self.offset_x + next.offset_x,
            offset_y: next.scale_y * self.offset_y + next.offset_y,
        }
    }

    pub fn inverse(&self) -> CoordTransform {
        CoordTransform {
            scale_x: 1.0 / self.scale_x,
            scale_y: 1.0 / self.scale_y,
            offset_x: -self.offset_x / self.scale_x,
            offset_y: -self.offset_y / self.scale_y,
        }
    }
}

/// Mapping direction for [`map_points`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Applies a transform to a point list.
pub fn map_points(points: &[(f64, f64)], t: &CoordTransform, dir: Direction) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|&p| match dir {
            Direction::Forward => t.apply(p),
            Direction::Inverse => t.apply_inverse(p),
        })
        .collect()
}

/// Pads to `M = max(h, w)` square with zero fill, content centered; the odd
/// leftover pixel goes to the bottom/right. Returned transform maps original
/// coordinates to padded coordinates.
pub fn pad_to_square(image: &ImageBuffer) -> (ImageBuffer, CoordTransform) {
    let (c, h, w) = image.data.dim();
    let m = h.max(w);
    let left = (m - w) / 2;
    let top = (m - h) / 2;
    let mut data = Array3::zeros((c, m, m));
    data.slice_mut(ndarray::s![.., top..top + h, left..left + w])
        .assign(&image.data);
    let t = CoordTransform { scale_x: 1.0, scale_y: 1.0, offset_x: left as f64, offset_y: top as f64 };
    (ImageBuffer { data }, t)
}

/// Bilinear resize of a square image to `side`x`side`. The coordinate map is
/// the pure scale p' = (side/M) * p, and sampling uses its exact inverse, so
/// keypoints carried through the transform stay aligned with the resampled
/// content. side == M copies bit-exactly.
pub fn resize(image: &ImageBuffer, side: usize) -> Result<(ImageBuffer, CoordTransform)> {
    let (c, h, w) = image.data.dim();
    if h != w {
        return Err(Error::contract(format!("resize requires square input, got {h}x{w}")));
    }
    if side < 1 {
        return Err(Error::contract("resize side must be >= 1"));
    }
    let m = h;
    let s = side as f64 / m as f64;
    let mut data = Array3::zeros((c, side, side));
    for y in 0..side {
        let sy = (y as f64 / s).clamp(0.0, (m - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(m - 1);
        let fy = sy - y0 as f64;
        for x in 0..side {
            let sx = (x as f64 / s).clamp(0.0, (m - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(m - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let v00 = image.data[[ch, y0, x0]];
                let v01 = image.data[[ch, y0, x1]];
                let v10 = image.data[[ch, y1, x0]];
                let v11 = image.data[[ch, y1, x1]];
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                data[[ch, y, x]] = top + fy * (bot - top);
            }
        }
    }
    let t = CoordTransform { scale_x: s, scale_y: s, offset_x: 0.0, offset_y: 0.0 };
    Ok((ImageBuffer { data }, t))
}

/// Grows width and height by (1+factor) about the box center, then clamps to
/// the image. Expand first, clamp second.
pub fn expand_box(b: &BoxRegion, factor: f64, bounds: (usize, usize)) -> Result<BoxRegion> {
    if factor < 0.0 {
        return Err(Error::contract("expand factor must be >= 0"));
    }
    let (img_h, img_w) = (bounds.0 as f64, bounds.1 as f64);
    let w = b.width * (1.0 + factor);
    let h = b.height * (1.0 + factor);
    let x0 = (b.x0 - (w - b.width) / 2.0).max(0.0);
    let y0 = (b.y0 - (h - b.height) / 2.0).max(0.0);
    BoxRegion::new(x0, y0, w.min(img_w - x0), h.min(img_h - y0))
}

/// Copies the pixel region covered by `b` (floor/ceil quantized, intersected
/// with the image). Returned transform maps crop coordinates back to original
/// coordinates.
pub fn crop(image: &ImageBuffer, b: &BoxRegion) -> Result<(ImageBuffer, CoordTransform)> {
    let (c, h, w) = image.data.dim();
    let x_start = b.x0.max(0.0).floor() as usize;
    let y_start = b.y0.max(0.0).floor() as usize;
    let x_end = ((b.x0 + b.width).min(w as f64).ceil() as usize).min(w);
    let y_end = ((b.y0 + b.height).min(h as f64).ceil() as usize).min(h);
    if x_end <= x_start || y_end <= y_start {
        return Err(Error::contract("crop box does not intersect image"));
    }
    let data = image
        .data
        .slice(ndarray::s![0..c, y_start..y_end, x_start..x_end])
        .to_owned();
    let t = CoordTransform {
        scale_x: 1.0,
        scale_y: 1.0,
        offset_x: x_start as f64,
        offset_y: y_start as f64,
    };
    Ok((ImageBuffer { data }, t))
}
