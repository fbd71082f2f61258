//! The two whole-image pose-estimation flows and the skeleton assembly step.
//!
//! The end-to-end flow feeds the entire image to the network: pad to square,
//! resize to the network input, forward, decode, map back. The cascade flow
//! first asks a person detector for a box, crops to it (grown by 15%), and
//! then runs the same steps on the crop. Both record the model-inference
//! wall time and return coordinates in the original image frame.
//!
//! A detector handing back the full image as its box makes the two flows
//! provably identical, which is the main cross-check test.

use crate::decode::{decode_to_image, heatmap_to_input_transform, DecodedKeypoints, DecoderMode};
use crate::geometry::{crop, expand_box, pad_to_square, resize, BoxRegion, CoordTransform, ImageBuffer};
use crate::heatmap::Heatmap;
use crate::keypoints::{Joint, JointName, KeypointSet, NUM_JOINTS, SKELETON_EDGES};
use crate::model::Network;
use crate::{Error, Result};
use ndarray::Array4;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Factor by which the cascade grows the detected box before cropping.
pub const CASCADE_BOX_EXPANSION: f64 = 0.15;

/// A completed estimate: joints in original-image coordinates, per-joint
/// confidences in channel order, the visible skeleton edges, and the model
/// forward-pass wall time.
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub keypoints: KeypointSet,
    pub confidences: [f64; NUM_JOINTS],
    pub edges: Vec<(JointName, JointName)>,
    pub inference_ms: f64,
}

/// One detector hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub region: BoxRegion,
    pub score: f64,
}

/// Seam for the person-detection stage of the cascade. Implementations must
/// return boxes inside the image and scores in [0, 1]; an empty list means
/// no person was found.
pub trait PersonDetector {
    fn detect(&self, image: &ImageBuffer) -> Result<Vec<Detection>>;
}

/// Stand-in detector that reads the ground-truth annotation instead of
/// running a real detector: it reports the tight bounding box of the visible
/// annotated joints, dilated by `margin` pixels per side and clamped to the
/// image. Boxes are at least one pixel wide so downstream cropping stays
/// valid even for degenerate single-point annotations.
#[derive(Debug, Clone)]
pub struct GroundTruthBoxDetector {
    pub annotation: Option<KeypointSet>,
    pub margin: f64,
}

impl PersonDetector for GroundTruthBoxDetector {
    fn detect(&self, image: &ImageBuffer) -> Result<Vec<Detection>> {
        let kp = self.annotation.as_ref().ok_or_else(|| {
            Error::MissingAnnotation("ground-truth detector has no annotation".into())
        })?;
        let visible: Vec<(f64, f64)> =
            kp.joints.iter().filter(|j| j.visible).map(|j| (j.x, j.y)).collect();
        if visible.is_empty() {
            return Ok(Vec::new());
        }
        let (w, h) = (image.width() as f64, image.height() as f64);
        let xmin = visible.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let xmax = visible.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let ymin = visible.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let ymax = visible.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (xmin - self.margin).max(0.0);
        let y0 = (ymin - self.margin).max(0.0);
        let x1 = (xmax + self.margin).min(w).max(x0 + 1.0);
        let y1 = (ymax + self.margin).min(h).max(y0 + 1.0);
        let region = BoxRegion::new(x0, y0, x1 - x0, y1 - y0)?;
        Ok(vec![Detection { region, score: 1.0 }])
    }
}

/// Pads to a square and resizes to the network input. The returned transform
/// maps original-image coordinates to network-input coordinates; for a square
/// image already at the target side it is the exact identity.
pub fn prepare_input(
    image: &ImageBuffer,
    input_side: usize,
) -> Result<(ImageBuffer, CoordTransform)> {
    let (padded, to_padded) = pad_to_square(image);
    let (resized, to_input) = resize(&padded, input_side)?;
    Ok((resized, to_padded.then(&to_input)))
}

fn image_to_batch(image: &ImageBuffer) -> Result<Array4<f64>> {
    if image.channels() != 3 {
        return Err(Error::Incompatible(format!(
            "the network wants 3-channel input, image has {}",
            image.channels()
        )));
    }
    Ok(image.data().clone().insert_axis(ndarray::Axis(0)))
}

fn check_model(net: &Network) -> Result<()> {
    if net.config().num_joints != NUM_JOINTS {
        return Err(Error::Incompatible(format!(
            "pose pipelines need a {NUM_JOINTS}-joint model, config has {}",
            net.config().num_joints
        )));
    }
    Ok(())
}

/// Runs the network on a prepared input and decodes the final stack.
/// Returns the decoded joints (heatmap frame) and the forward wall time.
fn run_model(
    net: &Network,
    input: &ImageBuffer,
    mode: DecoderMode,
) -> Result<(DecodedKeypoints, f64)> {
    let batch = image_to_batch(input)?;
    let started = std::time::Instant::now();
    let out = net.try_forward_eval(&batch)?;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let last = out.heatmaps.last().expect("at least one stack");
    let hm = Heatmap::new(last.index_axis(ndarray::Axis(0), 0).to_owned())?;
    Ok((mode.decode(&hm)?, elapsed_ms))
}

fn assemble(
    decoded: &DecodedKeypoints,
    heatmap_to_original: &CoordTransform,
    inference_ms: f64,
) -> Result<PoseEstimate> {
    let keypoints = decode_to_image(decoded, heatmap_to_original)?;
    let mut confidences = [0.0; NUM_JOINTS];
    for (slot, j) in confidences.iter_mut().zip(decoded.joints.iter()) {
        *slot = j.confidence;
    }
    let edges = connect_skeleton(&keypoints);
    Ok(PoseEstimate { keypoints, confidences, edges, inference_ms })
}

/// Whole-image flow: pad to square, resize, forward, decode the final stack,
/// map back to original coordinates, connect the skeleton.
pub fn estimate_end_to_end(
    image: &ImageBuffer,
    net: &Network,
    mode: DecoderMode,
) -> Result<PoseEstimate> {
    check_model(net)?;
    let cfg = net.config();
    let (input, original_to_input) = prepare_input(image, cfg.input_side)?;
    let (decoded, ms) = run_model(net, &input, mode)?;
    let hm_to_original = heatmap_to_input_transform(cfg.input_side, cfg.heatmap_side)?
        .then(&original_to_input.inverse());
    assemble(&decoded, &hm_to_original, ms)
}

/// Detector-first flow: take the highest-scoring detection, grow its box by
/// 15%, crop, then run the whole-image flow on the crop and map through the
/// full chain back to original coordinates. An empty detection list is the
/// distinct no-person failure, separate from any model error.
pub fn estimate_cascade(
    image: &ImageBuffer,
    detector: &dyn PersonDetector,
    net: &Network,
    mode: DecoderMode,
) -> Result<PoseEstimate> {
    check_model(net)?;
    let detections = detector.detect(image)?;
    for d in &detections {
        if !(d.score >= 0.0 && d.score <= 1.0) {
            return Err(Error::contract(format!("detector score {} outside [0, 1]", d.score)));
        }
    }
    let best = detections
        .iter()
        .max_by(|a, b| a.score.partial_cmp(&b.score).expect("scores validated finite"))
        .ok_or(Error::NoPerson)?;
    let grown = expand_box(&best.region, CASCADE_BOX_EXPANSION, (image.height(), image.width()))?;
    let (cropped, crop_to_original) = crop(image, &grown)?;
    let cfg = net.config();
    let (input, crop_to_input) = prepare_input(&cropped, cfg.input_side)?;
    let (decoded, ms) = run_model(net, &input, mode)?;
    let hm_to_original = heatmap_to_input_transform(cfg.input_side, cfg.heatmap_side)?
        .then(&crop_to_input.inverse())
        .then(&crop_to_original);
    assemble(&decoded, &hm_to_original, ms)
}

/// The fixed 6-link upper-limb chain, restricted to edges whose both
/// endpoints are visible.
pub fn connect_skeleton(keypoints: &KeypointSet) -> Vec<(JointName, JointName)> {
    SKELETON_EDGES
        .iter()
        .filter(|(a, b)| keypoints.joint(*a).visible && keypoints.joint(*b).visible)
        .copied()
        .collect()
}

/// One prediction, as written to the line-delimited output file. Field order
/// in each JSON line: `image`, `joints` (name, x, y, confidence per joint in
/// channel order), `edges` (name pairs), `inference_ms`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictionRecord {
    pub image: String,
    pub joints: Vec<PredictedJoint>,
    pub edges: Vec<(JointName, JointName)>,
    pub inference_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictedJoint {
    pub name: JointName,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl PoseEstimate {
    pub fn to_record(&self, image_id: &str) -> PredictionRecord {
        let joints = self
            .keypoints
            .joints
            .iter()
            .zip(crate::keypoints::JOINT_ORDER.iter())
            .zip(self.confidences.iter())
            .map(|((j, name), c)| PredictedJoint { name: *name, x: j.x, y: j.y, confidence: *c })
            .collect();
        PredictionRecord {
            image: image_id.to_string(),
            joints,
            edges: self.edges.clone(),
            inference_ms: self.inference_ms,
        }
    }
}

impl PredictionRecord {
    /// Rebuilds a keypoint set from the record for scoring. Joints may appear
    /// in any order but each of the seven names must appear exactly once.
    /// Predictions carry no scale of their own, so the reference length is a
    /// nominal 1.0; scoring always takes the scale from the ground truth.
    pub fn to_keypoints(&self) -> Result<KeypointSet> {
        if self.joints.len() != NUM_JOINTS {
            return Err(Error::contract(format!(
                "prediction for {} has {} joints, expected {NUM_JOINTS}",
                self.image,
                self.joints.len()
            )));
        }
        let mut joints = [Joint { x: 0.0, y: 0.0, visible: false }; NUM_JOINTS];
        let mut seen = [false; NUM_JOINTS];
        for j in &self.joints {
            let i = j.name.index();
            if seen[i] {
                return Err(Error::contract(format!(
                    "prediction for {} repeats joint {}",
                    self.image,
                    j.name.as_str()
                )));
            }
            seen[i] = true;
            joints[i] = Joint { x: j.x, y: j.y, visible: true };
        }
        KeypointSet::new(joints, 1.0)
    }
}

/// Writes predictions as one JSON object per line.
pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Reads a line-delimited prediction file; blank lines are ignored.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::Joint;
    use crate::model::{ModelConfig, UpsampleMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp_all_visible() -> KeypointSet {
        let joints = [
            Joint { x: 10.0, y: 40.0, visible: true },  // r_wrist
            Joint { x: 15.0, y: 30.0, visible: true },  // r_elbow
            Joint { x: 20.0, y: 20.0, visible: true },  // r_shoulder
            Joint { x: 30.0, y: 15.0, visible: true },  // neck
            Joint { x: 40.0, y: 20.0, visible: true },  // l_shoulder
            Joint { x: 45.0, y: 30.0, visible: true },  // l_elbow
            Joint { x: 50.0, y: 40.0, visible: true },  // l_wrist
        ];
        KeypointSet::new(joints, 12.0).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageBuffer {
        let mut data = ndarray::Array3::zeros((3, h, w));
        for v in data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        ImageBuffer::new(data).unwrap()
    }

    fn micro_net(rng: &mut ChaCha8Rng) -> Network {
        let cfg = ModelConfig {
            num_stacks: 1,
            hourglass_order: 1,
            channels: 8,
            num_joints: 7,
            input_side: 32,
            heatmap_side: 8,
            upsample: UpsampleMode::Deconv,
        };
        Network::new(cfg, rng).unwrap()
    }

    struct FixedBoxDetector(Vec<Detection>);

    impl PersonDetector for FixedBoxDetector {
        fn detect(&self, _image: &ImageBuffer) -> Result<Vec<Detection>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn skeleton_has_six_edges_when_all_visible() {
        assert_eq!(connect_skeleton(&kp_all_visible()).len(), 6);
    }

    #[test]
    fn invisible_neck_drops_both_neck_edges() {
        let mut kp = kp_all_visible();
        kp.joints[JointName::Neck.index()].visible = false;
        let edges = connect_skeleton(&kp);
        assert_eq!(edges.len(), 4);
        assert!(edges.iter().all(|(a, b)| *a != JointName::Neck && *b != JointName::Neck));
    }

    #[test]
    fn only_left_arm_gives_two_edges() {
        let mut kp = kp_all_visible();
        for name in [JointName::RWrist, JointName::RElbow, JointName::RShoulder, JointName::Neck] {
            kp.joints[name.index()].visible = false;
        }
        let edges = connect_skeleton(&kp);
        assert_eq!(edges, vec![
            (JointName::LWrist, JointName::LElbow),
            (JointName::LElbow, JointName::LShoulder),
        ]);
    }

    #[test]
    fn gt_detector_reports_tight_box_of_visible_joints() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let image = random_image(&mut rng, 120, 80);
        let mut kp = kp_all_visible();
        // span (10,10) to (50,90)
        kp.joints[0] = Joint { x: 10.0, y: 10.0, visible: true };
        kp.joints[6] = Joint { x: 50.0, y: 90.0, visible: true };
        for j in kp.joints.iter_mut().skip(1).take(5) {
            j.x = j.x.clamp(10.0, 50.0);
            j.y = j.y.clamp(10.0, 90.0);
        }
        let det = GroundTruthBoxDetector { annotation: Some(kp.clone()), margin: 0.0 };
        let boxes = det.detect(&image).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = boxes[0].region;
        assert_eq!((b.x0, b.y0, b.width, b.height), (10.0, 10.0, 40.0, 80.0));
        assert_eq!(boxes[0].score, 1.0);

        let det = GroundTruthBoxDetector { annotation: Some(kp), margin: 10.0 };
        let b = det.detect(&image).unwrap()[0].region;
        assert_eq!((b.x0, b.y0), (0.0, 0.0));
        assert_eq!((b.width, b.height), (60.0, 100.0));
    }

    #[test]
    fn gt_detector_without_annotation_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let image = random_image(&mut rng, 10, 10);
        let det = GroundTruthBoxDetector { annotation: None, margin: 0.0 };
        assert!(matches!(det.detect(&image), Err(Error::MissingAnnotation(_))));
    }

    #[test]
    fn gt_detector_box_contains_all_visible_joints() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let image = random_image(&mut rng, 100, 100);
        for _ in 0..50 {
            let mut kp = kp_all_visible();
            for j in kp.joints.iter_mut() {
                j.x = rng.gen_range(0.0..100.0);
                j.y = rng.gen_range(0.0..100.0);
                j.visible = rng.gen_bool(0.8);
            }
            if !kp.joints.iter().any(|j| j.visible) {
                continue;
            }
            let det = GroundTruthBoxDetector { annotation: Some(kp.clone()), margin: 2.0 };
            let b = det.detect(&image).unwrap()[0].region;
            for j in kp.joints.iter().filter(|j| j.visible) {
                assert!(j.x >= b.x0 && j.x <= b.x0 + b.width);
                assert!(j.y >= b.y0 && j.y <= b.y0 + b.height);
            }
        }
    }

    #[test]
    fn square_input_preprocessing_is_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let image = random_image(&mut rng, 32, 32);
        let (prepared, t) = prepare_input(&image, 32).unwrap();
        assert_eq!(t, CoordTransform::identity());
        assert_eq!(prepared.data(), image.data());
    }

    #[test]
    fn preprocessing_preserves_length_ratios() {
        // pad+resize must not deform: ratios of segment lengths survive
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let image = random_image(&mut rng, 48, 96);
        let (_, t) = prepare_input(&image, 32).unwrap();
        for _ in 0..20 {
            let pts: Vec<(f64, f64)> =
                (0..4).map(|_| (rng.gen_range(0.0..96.0), rng.gen_range(0.0..48.0))).collect();
            let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            let before = d(pts[0], pts[1]) / d(pts[2], pts[3]).max(1e-9);
            let after = d(t.apply(pts[0]), t.apply(pts[1])) / d(t.apply(pts[2]), t.apply(pts[3])).max(1e-9);
            assert!((before - after).abs() <= 1e-6 * before.abs().max(1.0));
        }
    }

    #[test]
    fn end_to_end_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let net = micro_net(&mut rng);
        let image = random_image(&mut rng, 24, 40);
        let a = estimate_end_to_end(&image, &net, DecoderMode::default()).unwrap();
        let b = estimate_end_to_end(&image, &net, DecoderMode::default()).unwrap();
        assert_eq!(a.keypoints.positions(), b.keypoints.positions());
        assert_eq!(a.confidences, b.confidences);
        assert_eq!(a.edges.len(), 6);
    }

    #[test]
    fn full_image_box_cascade_equals_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let net = micro_net(&mut rng);
        let image = random_image(&mut rng, 20, 28);
        let full = Detection {
            region: BoxRegion::new(0.0, 0.0, 28.0, 20.0).unwrap(),
            score: 0.9,
        };
        let det = FixedBoxDetector(vec![full]);
        let cascade = estimate_cascade(&image, &det, &net, DecoderMode::default()).unwrap();
        let direct = estimate_end_to_end(&image, &net, DecoderMode::default()).unwrap();
        assert_eq!(cascade.keypoints.positions(), direct.keypoints.positions());
        assert_eq!(cascade.confidences, direct.confidences);
        assert_eq!(cascade.edges, direct.edges);
    }

    #[test]
    fn cascade_picks_the_highest_scoring_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let net = micro_net(&mut rng);
        let image = random_image(&mut rng, 40, 40);
        let small = Detection {
            region: BoxRegion::new(5.0, 5.0, 10.0, 10.0).unwrap(),
            score: 0.4,
        };
        let full = Detection {
            region: BoxRegion::new(0.0, 0.0, 40.0, 40.0).unwrap(),
            score: 0.8,
        };
        let det_both = FixedBoxDetector(vec![small, full]);
        let det_full = FixedBoxDetector(vec![full]);
        let a = estimate_cascade(&image, &det_both, &net, DecoderMode::default()).unwrap();
        let b = estimate_cascade(&image, &det_full, &net, DecoderMode::default()).unwrap();
        assert_eq!(a.keypoints.positions(), b.keypoints.positions());
    }

    #[test]
    fn empty_detections_are_a_distinct_no_person_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let net = micro_net(&mut rng);
        let image = random_image(&mut rng, 16, 16);
        let det = FixedBoxDetector(Vec::new());
        assert!(matches!(
            estimate_cascade(&image, &det, &net, DecoderMode::default()),
            Err(Error::NoPerson)
        ));
    }

    #[test]
    fn grayscale_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let net = micro_net(&mut rng);
        let mut data = ndarray::Array3::zeros((1, 16, 16));
        for v in data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let gray = ImageBuffer::new(data).unwrap();
        assert!(estimate_end_to_end(&gray, &net, DecoderMode::default()).is_err());
    }

    #[test]
    fn prediction_records_round_trip_through_jsonl() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let net = micro_net(&mut rng);
        let image = random_image(&mut rng, 24, 24);
        let est = estimate_end_to_end(&image, &net, DecoderMode::default()).unwrap();
        let records = vec![est.to_record("img_000"), est.to_record("img_001")];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        write_predictions(&path, &records).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back, records);
        assert_eq!(back[0].joints.len(), NUM_JOINTS);
        assert_eq!(back[0].joints[0].name, JointName::RWrist);
    }
}
