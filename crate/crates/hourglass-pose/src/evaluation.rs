//! PCKh accuracy, accuracy-vs-threshold curves, and latency benchmarking.
//!
//! A predicted joint is correct when it lands within α times the sample's
//! reference length of the ground truth; distance exactly equal to the
//! threshold counts as correct. Joints whose ground truth is invisible are
//! excluded from both numerator and denominator. Results are grouped as
//! shoulder / elbow / wrist pairs plus the neck on its own.

use crate::decode::DecoderMode;
use crate::geometry::ImageBuffer;
use crate::keypoints::{JointName, KeypointSet, JOINT_ORDER, NUM_JOINTS};
use crate::model::{ModelConfig, Network, ParameterStore};
use crate::pipeline::estimate_end_to_end;
use crate::training::Sample;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointGroup {
    Shoulder,
    Elbow,
    Wrist,
    Neck,
}

pub const GROUP_ORDER: [JointGroup; 4] =
    [JointGroup::Shoulder, JointGroup::Elbow, JointGroup::Wrist, JointGroup::Neck];

impl JointGroup {
    pub fn of(joint: JointName) -> JointGroup {
        match joint {
            JointName::LShoulder | JointName::RShoulder => JointGroup::Shoulder,
            JointName::LElbow | JointName::RElbow => JointGroup::Elbow,
            JointName::LWrist | JointName::RWrist => JointGroup::Wrist,
            JointName::Neck => JointGroup::Neck,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JointGroup::Shoulder => "shoulder",
            JointGroup::Elbow => "elbow",
            JointGroup::Wrist => "wrist",
            JointGroup::Neck => "neck",
        }
    }
}

/// Per-joint hit flags at one threshold. `None` marks joints excluded from
/// scoring because the ground truth is invisible; predictions are scored by
/// position alone, whatever their own visibility flag says.
pub fn pckh(
    pred: &KeypointSet,
    gt: &KeypointSet,
    alpha: f64,
) -> Result<[Option<bool>; NUM_JOINTS]> {
    if !(gt.reference_length > 0.0) {
        return Err(Error::contract(format!(
            "reference length must be positive, got {}",
            gt.reference_length
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::contract(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let threshold = alpha * gt.reference_length;
    let mut hits = [None; NUM_JOINTS];
    for (i, (p, g)) in pred.joints.iter().zip(gt.joints.iter()).enumerate() {
        if !g.visible {
            continue;
        }
        let d = ((p.x - g.x).powi(2) + (p.y - g.y).powi(2)).sqrt();
        hits[i] = Some(d <= threshold);
    }
    Ok(hits)
}

/// Accuracy of each joint group at one threshold. The alpha value rides
/// along so rows can be written straight into a curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub shoulder: f64,
    pub elbow: f64,
    pub wrist: f64,
    pub neck: f64,
}

impl CurvePoint {
    pub fn group(&self, g: JointGroup) -> f64 {
        match g {
            JointGroup::Shoulder => self.shoulder,
            JointGroup::Elbow => self.elbow,
            JointGroup::Wrist => self.wrist,
            JointGroup::Neck => self.neck,
        }
    }
}

/// Scores one threshold across a dataset. A group with no scorable joints
/// anywhere in the dataset is vacuously perfect and reports 1.0.
pub fn pckh_at(
    predictions: &[KeypointSet],
    ground_truths: &[KeypointSet],
    alpha: f64,
) -> Result<CurvePoint> {
    if predictions.is_empty() {
        return Err(Error::contract("no predictions to score"));
    }
    if predictions.len() != ground_truths.len() {
        return Err(Error::contract(format!(
            "{} predictions vs {} ground truths",
            predictions.len(),
            ground_truths.len()
        )));
    }
    let mut hit = [0usize; 4];
    let mut total = [0usize; 4];
    for (p, g) in predictions.iter().zip(ground_truths.iter()) {
        let flags = pckh(p, g, alpha)?;
        for (joint, flag) in JOINT_ORDER.iter().zip(flags.iter()) {
            if let Some(ok) = flag {
                let gi = GROUP_ORDER.iter().position(|&x| x == JointGroup::of(*joint)).unwrap();
                total[gi] += 1;
                if *ok {
                    hit[gi] += 1;
                }
            }
        }
    }
    let rate = |gi: usize| if total[gi] == 0 { 1.0 } else { hit[gi] as f64 / total[gi] as f64 };
    Ok(CurvePoint {
        alpha,
        shoulder: rate(0),
        elbow: rate(1),
        wrist: rate(2),
        neck: rate(3),
    })
}

/// One row per requested threshold, in the order given.
pub fn accuracy_curve(
    predictions: &[KeypointSet],
    ground_truths: &[KeypointSet],
    alphas: &[f64],
) -> Result<Vec<CurvePoint>> {
    if alphas.is_empty() {
        return Err(Error::contract("accuracy curve needs at least one alpha"));
    }
    alphas.iter().map(|&a| pckh_at(predictions, ground_truths, a)).collect()
}

/// Thresholds 0.0, 0.05, .., 0.5.
pub fn default_alphas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy at the headline threshold 0.5.
    pub pckh05: CurvePoint,
    pub curve: Vec<CurvePoint>,
    pub latency: Option<LatencyStats>,
    pub samples: usize,
}

/// Scores aligned predictions against ground truth. Latency is left unset;
/// use [`evaluate_model`] or [`benchmark_latency`] when a model is at hand.
pub fn evaluate(
    predictions: &[KeypointSet],
    ground_truths: &[KeypointSet],
    alphas: &[f64],
) -> Result<EvalReport> {
    Ok(EvalReport {
        pckh05: pckh_at(predictions, ground_truths, 0.5)?,
        curve: accuracy_curve(predictions, ground_truths, alphas)?,
        latency: None,
        samples: predictions.len(),
    })
}

/// Runs the whole-image pipeline on every sample image.
pub fn predict_keypoints(
    net: &Network,
    samples: &[Sample],
    mode: DecoderMode,
) -> Result<Vec<KeypointSet>> {
    samples.iter().map(|s| Ok(estimate_end_to_end(&s.image, net, mode)?.keypoints)).collect()
}

/// Times forward+decode per image on one thread, cycling through `images`.
/// The first `warmup` runs are discarded; `reps` timed runs follow.
pub fn benchmark_latency(
    net: &Network,
    images: &[ImageBuffer],
    mode: DecoderMode,
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if images.is_empty() {
        return Err(Error::contract("benchmark needs at least one image"));
    }
    if reps < 10 {
        return Err(Error::contract(format!("benchmark needs at least 10 reps, got {reps}")));
    }
    if reps < warmup {
        return Err(Error::contract(format!(
            "reps ({reps}) must not be fewer than warmup discards ({warmup})"
        )));
    }
    let mut times = Vec::with_capacity(reps);
    for i in 0..warmup + reps {
        let est = estimate_end_to_end(&images[i % images.len()], net, mode)?;
        if i >= warmup {
            times.push(est.inference_ms);
        }
    }
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("times are finite"));
    let mean = times.iter().sum::<f64>() / reps as f64;
    let median = if reps % 2 == 0 {
        (sorted[reps / 2 - 1] + sorted[reps / 2]) / 2.0
    } else {
        sorted[reps / 2]
    };
    // nearest-rank percentile
    let p95 = sorted[((0.95 * reps as f64).ceil() as usize).clamp(1, reps) - 1];
    Ok(LatencyStats { mean_ms: mean, median_ms: median, p95_ms: p95, reps })
}

/// Full report for one model on a labeled set: curve, headline PCKh, and a
/// latency measurement on the first image.
pub fn evaluate_model(
    net: &Network,
    samples: &[Sample],
    mode: DecoderMode,
    alphas: &[f64],
    warmup: usize,
    reps: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::contract("no samples to evaluate"));
    }
    let predictions = predict_keypoints(net, samples, mode)?;
    let ground_truths: Vec<KeypointSet> = samples.iter().map(|s| s.keypoints.clone()).collect();
    let mut report = evaluate(&predictions, &ground_truths, alphas)?;
    report.latency = Some(benchmark_latency(
        net,
        std::slice::from_ref(&samples[0].image),
        mode,
        warmup,
        reps,
    )?);
    Ok(report)
}

/// One row of the variant-comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    /// sh{stacks}{order} shorthand.
    pub variant: String,
    pub config: ModelConfig,
    pub pckh05: CurvePoint,
    pub latency: LatencyStats,
}

/// Loads each variant's weights and produces a table-shaped report. Missing
/// or mismatched weight files fail with the variant named.
pub fn compare_variants(
    variants: &[(ModelConfig, PathBuf)],
    samples: &[Sample],
    mode: DecoderMode,
    warmup: usize,
    reps: usize,
) -> Result<Vec<VariantRow>> {
    if variants.is_empty() {
        return Err(Error::contract("no variants to compare"));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (config, path) in variants {
        let name = config.variant_name();
        if !path.exists() {
            return Err(Error::Incompatible(format!(
                "variant {name}: weights not found at {}",
                path.display()
            )));
        }
        let store = ParameterStore::load(path)
            .map_err(|e| Error::Incompatible(format!("variant {name}: {e}")))?;
        if store.config != *config {
            return Err(Error::Incompatible(format!(
                "variant {name}: weights at {} were trained as {}",
                path.display(),
                store.config.variant_name()
            )));
        }
        let net = Network::from_store(&store)?;
        let report = evaluate_model(&net, samples, mode, &[0.5], warmup, reps)?;
        rows.push(VariantRow {
            variant: name,
            config: *config,
            pckh05: report.pckh05,
            latency: report.latency.expect("evaluate_model always measures latency"),
        });
    }
    Ok(rows)
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "alpha,shoulder,elbow,wrist,neck")?;
    for p in curve {
        writeln!(out, "{},{},{},{},{}", p.alpha, p.shoulder, p.elbow, p.wrist, p.neck)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_variant_csv(path: impl AsRef<Path>, rows: &[VariantRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "variant,stacks,order,shoulder,elbow,wrist,neck,mean_ms,median_ms,p95_ms")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.config.num_stacks,
            r.config.hourglass_order,
            r.pckh05.shoulder,
            r.pckh05.elbow,
            r.pckh05.wrist,
            r.pckh05.neck,
            r.latency.mean_ms,
            r.latency.median_ms,
            r.latency.p95_ms
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Pretty-printed JSON summary for any report shape.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
