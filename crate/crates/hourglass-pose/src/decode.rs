//! Heatmap-to-coordinate decoders.
//!
//! Two decoders share one output type. The argmax decoder reports the grid
//! cell with the highest score; its coordinates are integers and its precision
//! is capped by the heatmap resolution. The integral decoder reports the
//! softmax-weighted centroid of the whole grid, which is sub-pixel but blurs
//! toward the grid center when the map is flat. Sharpening the map before the
//! integral (see [`DecoderMode::Integral`]) trades those failure modes off;
//! the guide's decoding chapter quantifies the effect.

use crate::geometry::CoordTransform;
use crate::heatmap::Heatmap;
use crate::keypoints::{Joint, KeypointSet, NUM_JOINTS};
use crate::{Error, Result};

/// One decoded joint, in heatmap pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedJoint {
    pub x: f64,
    pub y: f64,
    /// Peak softmax probability of the channel, in [0, 1].
    pub confidence: f64,
}

/// Per-channel decode results, in channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedKeypoints {
    pub joints: Vec<DecodedJoint>,
}

/// Decoder selection for the pipelines.
///
/// `Integral { gain }` multiplies every heatmap value by `gain` before the
/// softmax. The published integral formula applied verbatim to a
/// unit-amplitude Gaussian target drags coordinates toward the grid center,
/// because the e^0 = 1 background of a 64x64 grid holds most of the softmax
/// mass; a gain of [`DEFAULT_INTEGRAL_GAIN`] suppresses the background below
/// 1e-4 relative mass while keeping the centroid sub-pixel. Gain 1.0
/// reproduces the verbatim formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecoderMode {
    Argmax,
    Integral { gain: f64 },
}

/// Sharpening gain used by the default pipeline configuration.
pub const DEFAULT_INTEGRAL_GAIN: f64 = 16.0;

impl Default for DecoderMode {
    fn default() -> Self {
        DecoderMode::Integral { gain: DEFAULT_INTEGRAL_GAIN }
    }
}

impl DecoderMode {
    /// Runs the selected decoder, applying the integral gain when present.
    pub fn decode(&self, heatmap: &Heatmap) -> Result<DecodedKeypoints> {
        match *self {
            DecoderMode::Argmax => argmax_decode(heatmap),
            DecoderMode::Integral { gain } => {
                if !(gain.is_finite() && gain > 0.0) {
                    return Err(Error::contract(format!(
                        "integral gain must be finite and positive, got {gain}"
                    )));
                }
                let scaled = Heatmap::new(heatmap.values.mapv(|v| v * gain))?;
                integral_decode(&scaled)
            }
        }
    }
}

fn check_finite(heatmap: &Heatmap) -> Result<()> {
    if heatmap.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Incompatible("heatmap contains non-finite values".into()));
    }
    Ok(())
}

/// Highest-scoring grid cell per channel. Ties break to the first occurrence
/// in row-major order, so the result is deterministic. Confidence is the
/// softmax-normalized score at the reported cell.
pub fn argmax_decode(heatmap: &Heatmap) -> Result<DecodedKeypoints> {
    check_finite(heatmap)?;
    let (k, h, w) = heatmap.values.dim();
    let mut joints = Vec::with_capacity(k);
    for c in 0..k {
        let ch = heatmap.values.index_axis(ndarray::Axis(0), c);
        let mut best = f64::NEG_INFINITY;
        let mut pos = (0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                let v = ch[[y, x]];
                if v > best {
                    best = v;
                    pos = (x, y);
                }
            }
        }
        // softmax at the peak, max-subtracted: 1 / sum(e^(v - best))
        let z: f64 = ch.iter().map(|v| (v - best).exp()).sum();
        joints.push(DecodedJoint { x: pos.0 as f64, y: pos.1 as f64, confidence: 1.0 / z });
    }
    Ok(DecodedKeypoints { joints })
}

/// Softmax-weighted centroid per channel: J = sum_p p * softmax(H)(p) over
/// the full grid, computed with max-subtraction. Coordinates are convex
/// combinations of grid positions, so they always lie inside the grid.
/// Confidence is the peak softmax probability.
pub fn integral_decode(heatmap: &Heatmap) -> Result<DecodedKeypoints> {
    check_finite(heatmap)?;
    let (k, h, w) = heatmap.values.dim();
    let mut joints = Vec::with_capacity(k);
    for c in 0..k {
        let ch = heatmap.values.index_axis(ndarray::Axis(0), c);
        let m = ch.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut z = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for y in 0..h {
            for x in 0..w {
                let e = (ch[[y, x]] - m).exp();
                z += e;
                sx += x as f64 * e;
                sy += y as f64 * e;
            }
        }
        joints.push(DecodedJoint { x: sx / z, y: sy / z, confidence: 1.0 / z });
    }
    Ok(DecodedKeypoints { joints })
}

/// Transform taking heatmap pixels to network-input pixels: a pure scale of
/// input_side / heatmap_side per axis.
pub fn heatmap_to_input_transform(input_side: usize, heatmap_side: usize) -> Result<CoordTransform> {
    if input_side == 0 || heatmap_side == 0 {
        return Err(Error::contract("sides must be positive"));
    }
    let s = input_side as f64 / heatmap_side as f64;
    CoordTransform::new(s, s, 0.0, 0.0)
}

/// Maps decoded joints into original-image coordinates through `transform`
/// (heatmap frame to original frame; the pipelines compose it from the
/// heatmap-to-input scale and the inverted preprocessing chain). Requires
/// exactly the 7-joint channel layout. All joints are marked visible; the
/// returned set carries a nominal unit reference length, because accuracy
/// scoring always normalizes by the annotation's reference, never the
/// prediction's.
pub fn decode_to_image(
    decoded: &DecodedKeypoints,
    transform: &CoordTransform,
) -> Result<KeypointSet> {
    if decoded.joints.len() != NUM_JOINTS {
        return Err(Error::Incompatible(format!(
            "expected {NUM_JOINTS} decoded joints, got {}",
            decoded.joints.len()
        )));
    }
    let mut joints = [Joint { x: 0.0, y: 0.0, visible: true }; NUM_JOINTS];
    for (slot, d) in joints.iter_mut().zip(decoded.joints.iter()) {
        let (x, y) = transform.apply((d.x, d.y));
        slot.x = x;
        slot.y = y;
    }
    KeypointSet::new(joints, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_channel(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Heatmap {
        let mut a = Array3::zeros((1, h, w));
        for y in 0..h {
            for x in 0..w {
                a[[0, y, x]] = f(y, x);
            }
        }
        Heatmap::new(a).unwrap()
    }

    #[test]
    fn argmax_finds_a_one_hot_peak() {
        let hm = single_channel(10, 10, |y, x| if (y, x) == (7, 5) { 1.0 } else { 0.0 });
        let d = argmax_decode(&hm).unwrap();
        assert_eq!((d.joints[0].x, d.joints[0].y), (5.0, 7.0));
        assert!(d.joints[0].confidence > 0.0 && d.joints[0].confidence <= 1.0);
    }

    #[test]
    fn argmax_breaks_ties_row_major() {
        let hm = single_channel(4, 4, |_, _| 0.25);
        let d = argmax_decode(&hm).unwrap();
        assert_eq!((d.joints[0].x, d.joints[0].y), (0.0, 0.0));
    }

    #[test]
    fn argmax_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let hm = single_channel(9, 13, |_, _| rng.gen_range(-3.0..3.0));
            let d = argmax_decode(&hm).unwrap();
            let ch = hm.values.index_axis(ndarray::Axis(0), 0);
            let mut best = (0, 0, f64::NEG_INFINITY);
            for y in 0..9 {
                for x in 0..13 {
                    if ch[[y, x]] > best.2 {
                        best = (x, y, ch[[y, x]]);
                    }
                }
            }
            assert_eq!((d.joints[0].x, d.joints[0].y), (best.0 as f64, best.1 as f64));
        }
    }

    #[test]
    fn argmax_is_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let hm = single_channel(8, 8, |_, _| rng.gen_range(-2.0..2.0));
        let base = argmax_decode(&hm).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [|v| 3.0 * v + 1.0, f64::tanh, |v| v.powi(3)];
        for t in transforms {
            let mapped = Heatmap::new(hm.values.mapv(t)).unwrap();
            let d = argmax_decode(&mapped).unwrap();
            assert_eq!((d.joints[0].x, d.joints[0].y), (base.joints[0].x, base.joints[0].y));
        }
    }

    #[test]
    fn non_finite_channels_are_rejected() {
        let hm = single_channel(3, 3, |y, x| if (y, x) == (1, 1) { f64::NAN } else { 0.0 });
        assert!(argmax_decode(&hm).is_err());
        assert!(integral_decode(&hm).is_err());
    }

    #[test]
    fn integral_of_uniform_map_is_grid_center() {
        let hm = single_channel(8, 6, |_, _| 0.7);
        let d = integral_decode(&hm).unwrap();
        assert!((d.joints[0].x - 2.5).abs() < 1e-12);
        assert!((d.joints[0].y - 3.5).abs() < 1e-12);
    }

    #[test]
    fn integral_of_symmetric_triple_is_the_middle() {
        let hm = single_channel(1, 3, |_, x| if x == 1 { 1.0 } else { 0.0 });
        let d = integral_decode(&hm).unwrap();
        assert!((d.joints[0].x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integral_matches_literal_softmax_sum() {
        // [0, 0, 1] -> x = (0*1 + 1*1 + 2*e) / (1 + 1 + e)
        let hm = single_channel(1, 3, |_, x| if x == 2 { 1.0 } else { 0.0 });
        let d = integral_decode(&hm).unwrap();
        let e = std::f64::consts::E;
        let expect = (1.0 + 2.0 * e) / (2.0 + e);
        assert!((d.joints[0].x - expect).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let hm = single_channel(5, 7, |_, _| rng.gen_range(-2.0..2.0));
            let d = integral_decode(&hm).unwrap();
            let ch = hm.values.index_axis(ndarray::Axis(0), 0);
            let z: f64 = ch.iter().map(|v| v.exp()).sum();
            let mut ex = 0.0;
            let mut ey = 0.0;
            for y in 0..5 {
                for x in 0..7 {
                    ex += x as f64 * ch[[y, x]].exp() / z;
                    ey += y as f64 * ch[[y, x]].exp() / z;
                }
            }
            assert!((d.joints[0].x - ex).abs() < 1e-9);
            assert!((d.joints[0].y - ey).abs() < 1e-9);
        }
    }

    #[test]
    fn integral_is_invariant_to_constant_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let hm = single_channel(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let base = integral_decode(&hm).unwrap();
        for c in [-50.0, 3.0, 700.0] {
            let shifted = Heatmap::new(hm.values.mapv(|v| v + c)).unwrap();
            let d = integral_decode(&shifted).unwrap();
            assert!((d.joints[0].x - base.joints[0].x).abs() < 1e-9);
            assert!((d.joints[0].y - base.joints[0].y).abs() < 1e-9);
        }
    }

    #[test]
    fn integral_approaches_argmax_under_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..10 {
            let py = rng.gen_range(0..8);
            let px = rng.gen_range(0..8);
            let hm = single_channel(8, 8, |y, x| {
                let base = rng.gen_range(0.0..0.3);
                if (y, x) == (py, px) {
                    1.0
                } else {
                    base
                }
            });
            let am = argmax_decode(&hm).unwrap();
            let sharpened = Heatmap::new(hm.values.mapv(|v| v * 50.0)).unwrap();
            let it = integral_decode(&sharpened).unwrap();
            assert!((it.joints[0].x - am.joints[0].x).abs() < 0.01);
            assert!((it.joints[0].y - am.joints[0].y).abs() < 0.01);
        }
    }

    #[test]
    fn both_decoders_shift_with_translated_content() {
        // a sharp interior peak moved by an integer offset moves both decodes
        // by exactly that offset (argmax bitwise, integral to float noise)
        let peak = |y: usize, x: usize, py: usize, px: usize| {
            let dy = y as f64 - py as f64;
            let dx = x as f64 - px as f64;
            30.0 * (-(dx * dx + dy * dy) / 2.0).exp()
        };
        let a = single_channel(12, 12, |y, x| peak(y, x, 4, 5));
        let b = single_channel(12, 12, |y, x| peak(y, x, 6, 8));
        let (dx, dy) = (3.0, 2.0);

        let am_a = argmax_decode(&a).unwrap();
        let am_b = argmax_decode(&b).unwrap();
        assert_eq!(am_b.joints[0].x, am_a.joints[0].x + dx);
        assert_eq!(am_b.joints[0].y, am_a.joints[0].y + dy);

        let it_a = integral_decode(&a).unwrap();
        let it_b = integral_decode(&b).unwrap();
        assert!((it_b.joints[0].x - it_a.joints[0].x - dx).abs() < 1e-9);
        assert!((it_b.joints[0].y - it_a.joints[0].y - dy).abs() < 1e-9);
    }

    #[test]
    fn integral_stays_inside_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..30 {
            let hm = single_channel(6, 9, |_, _| rng.gen_range(-40.0..40.0));
            let d = integral_decode(&hm).unwrap();
            assert!(d.joints[0].x >= 0.0 && d.joints[0].x <= 8.0);
            assert!(d.joints[0].y >= 0.0 && d.joints[0].y <= 5.0);
        }
    }

    #[test]
    fn decode_to_image_scales_by_resolution_ratio() {
        let joints = (0..NUM_JOINTS)
            .map(|_| DecodedJoint { x: 32.0, y: 32.0, confidence: 1.0 })
            .collect();
        let decoded = DecodedKeypoints { joints };
        let t = heatmap_to_input_transform(256, 64).unwrap();
        let kp = decode_to_image(&decoded, &t).unwrap();
        for j in kp.joints.iter() {
            assert_eq!((j.x, j.y), (128.0, 128.0));
            assert!(j.visible);
        }
    }

    #[test]
    fn decode_to_image_sends_origin_to_transform_offset() {
        let joints = (0..NUM_JOINTS)
            .map(|_| DecodedJoint { x: 0.0, y: 0.0, confidence: 0.5 })
            .collect();
        let decoded = DecodedKeypoints { joints };
        let t = CoordTransform::new(4.0, 4.0, 11.0, -7.0).unwrap();
        let kp = decode_to_image(&decoded, &t).unwrap();
        for j in kp.joints.iter() {
            assert_eq!((j.x, j.y), (11.0, -7.0));
        }
    }

    #[test]
    fn decode_to_image_wants_exactly_seven_joints() {
        let decoded = DecodedKeypoints {
            joints: vec![DecodedJoint { x: 0.0, y: 0.0, confidence: 1.0 }; 3],
        };
        assert!(decode_to_image(&decoded, &CoordTransform::identity()).is_err());
    }

    #[test]
    fn decoder_mode_gain_sharpens_the_integral() {
        // weak unit-amplitude peak off-center: verbatim integral drifts toward
        // the grid center, the gain-scaled mode stays at the peak
        let hm = single_channel(16, 16, |y, x| {
            let dy = y as f64 - 3.0;
            let dx = x as f64 - 3.0;
            (-(dx * dx + dy * dy) / (2.0 * 4.0)).exp()
        });
        let verbatim = DecoderMode::Integral { gain: 1.0 }.decode(&hm).unwrap();
        let sharpened = DecoderMode::default().decode(&hm).unwrap();
        let err = |d: &DecodedKeypoints| {
            ((d.joints[0].x - 3.0).powi(2) + (d.joints[0].y - 3.0).powi(2)).sqrt()
        };
        assert!(err(&verbatim) > 1.0, "verbatim drift {}", err(&verbatim));
        assert!(err(&sharpened) < 0.1, "sharpened error {}", err(&sharpened));
        let am = DecoderMode::Argmax.decode(&hm).unwrap();
        assert_eq!((am.joints[0].x, am.joints[0].y), (3.0, 3.0));
    }
}
