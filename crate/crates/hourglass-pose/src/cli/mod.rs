//! Subcommand bodies behind the `hgpose` binary.
//!
//! Each command is a plain function over a [`RunConfig`] so tests can drive
//! the exact code the binary runs without spawning a process. Commands check
//! every referenced path up front, create the output directory if absent, and
//! only then start heavy work. All outputs are deterministic for a fixed seed
//! except fields whose names end in `_ms`, which are wall-clock timings.

use crate::config::{PipelineMode, RunConfig};
use crate::evaluation::{self, EvalReport, VariantRow};
use crate::geometry::ImageBuffer;
use crate::keypoints::KeypointSet;
use crate::model::{Network, ParameterStore};
use crate::pipeline::{
    estimate_cascade, estimate_end_to_end, read_predictions, write_predictions,
    GroundTruthBoxDetector, PoseEstimate, PredictionRecord,
};
use crate::training::dataset::{
    load_annotations, load_annotations_file, load_dataset, load_png, save_png, write_dataset,
    AnnotationRecord,
};
use crate::training::{generate_synthetic_sample, train_from, Sample};
use crate::{Error, Result};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// File predict writes its records to, inside the output directory.
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// File predict writes per-image failures to. Failures go to their own file
/// so the prediction file stays parseable as records alone.
pub const ERRORS_FILE: &str = "errors.jsonl";

fn require_path<'a>(path: Option<&'a Path>, key: &str) -> Result<&'a Path> {
    let p = path.ok_or_else(|| Error::Config(format!("{key} is not set")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{key} names a missing path: {}", p.display())));
    }
    Ok(p)
}

fn load_network(path: &Path, expected: &crate::model::ModelConfig) -> Result<Network> {
    let store = ParameterStore::load(path)?;
    if store.config != *expected {
        return Err(Error::Incompatible(format!(
            "weights at {} were trained as {} with input {}, config asks for {} with input {}",
            path.display(),
            store.config.variant_name(),
            store.config.input_side,
            expected.variant_name(),
            expected.input_side,
        )));
    }
    Network::from_store(&store)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub count: usize,
    pub canvas: usize,
    pub seed: u64,
    pub dir: PathBuf,
}

/// Generates `synth.count` labeled scenes into the dataset directory
/// (`paths.dataset`, or `<out>/dataset` when unset).
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    cfg.validate()?;
    let dir = cfg.dataset_dir.clone().unwrap_or_else(|| cfg.out_dir.join("dataset"));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut samples = Vec::with_capacity(cfg.synth_count);
    for _ in 0..cfg.synth_count {
        samples.push(generate_synthetic_sample(&cfg.scene, &mut rng)?);
    }
    write_dataset(&dir, &samples)?;
    let summary = SynthSummary {
        count: samples.len(),
        canvas: cfg.scene.canvas,
        seed: cfg.train.seed,
        dir,
    };
    println!(
        "synth: {} samples, {}px canvas, seed {} -> {}",
        summary.count,
        summary.canvas,
        summary.seed,
        summary.dir.display()
    );
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub weights: PathBuf,
}

/// Given either half of a checkpoint pair, returns (weights, optimizer) paths.
fn checkpoint_pair(path: &Path) -> Result<(PathBuf, PathBuf)> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("resume path has no file name: {}", path.display())))?;
    if let Some(stem) = name.strip_suffix(".weights.bin") {
        Ok((path.to_path_buf(), path.with_file_name(format!("{stem}.opt.bin"))))
    } else if let Some(stem) = name.strip_suffix(".opt.bin") {
        Ok((path.with_file_name(format!("{stem}.weights.bin")), path.to_path_buf()))
    } else {
        Err(Error::Config(format!(
            "resume expects a .weights.bin or .opt.bin checkpoint, got {}",
            path.display()
        )))
    }
}

/// Trains on the configured dataset. `resume` may point at either file of a
/// checkpoint pair; the sibling is derived by swapping the suffix, and the
/// run continues from the epoch after the one that wrote the pair.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let data_dir = require_path(cfg.dataset_dir.as_deref(), "paths.dataset")?;
    let entries = load_dataset(data_dir)?;
    let samples: Vec<Sample> = entries.into_iter().map(|e| e.sample).collect();
    std::fs::create_dir_all(&cfg.out_dir)?;

    let (mut net, start_epoch, opt_state) = match resume {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            (Network::new(cfg.model, &mut rng)?, 0, None)
        }
        Some(p) => {
            let (weights_path, opt_path) = checkpoint_pair(p)?;
            for half in [&weights_path, &opt_path] {
                if !half.exists() {
                    return Err(Error::Config(format!(
                        "resume names a missing path: {}",
                        half.display()
                    )));
                }
            }
            let net = load_network(&weights_path, &cfg.model)?;
            let ck = crate::training::load_optimizer_state(&opt_path)?;
            (net, ck.next_epoch, Some(ck.state))
        }
    };

    let outcome = train_from(&mut net, &samples, &cfg.train, &cfg.out_dir, start_epoch, opt_state)?;
    let summary = TrainSummary {
        epochs_run: outcome.losses.len(),
        first_loss: outcome.losses.first().copied(),
        final_loss: outcome.losses.last().copied(),
        weights: cfg.out_dir.join("weights.bin"),
    };
    match (summary.first_loss, summary.final_loss) {
        (Some(a), Some(b)) => println!(
            "train: {} epochs, loss {a:.6} -> {b:.6}, weights at {}",
            summary.epochs_run,
            summary.weights.display()
        ),
        _ => println!("train: nothing left to run, weights at {}", summary.weights.display()),
    }
    Ok(summary)
}

/// One per-image failure, as written to [`ERRORS_FILE`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorEntry {
    pub image: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictSummary {
    pub records: usize,
    pub failures: usize,
    pub predictions: PathBuf,
    pub overlays: Option<PathBuf>,
}

fn image_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn predict_one(
    net: &Network,
    cfg: &RunConfig,
    path: &Path,
    boxes: Option<&HashMap<String, KeypointSet>>,
) -> Result<(ImageBuffer, PoseEstimate)> {
    let image = load_png(path)?;
    let est = match boxes {
        None => estimate_end_to_end(&image, net, cfg.decoder_mode())?,
        Some(map) => {
            let detector = GroundTruthBoxDetector {
                annotation: map.get(&image_id(path)).cloned(),
                margin: cfg.detector_margin,
            };
            estimate_cascade(&image, &detector, net, cfg.decoder_mode())?
        }
    };
    Ok((image, est))
}

/// Runs the configured pipeline over the given images. Per-image failures are
/// appended to [`ERRORS_FILE`] and processing continues; callers should treat
/// a nonzero `failures` count as a failed run.
pub fn cmd_predict(cfg: &RunConfig, inputs: &[PathBuf], overlay: bool) -> Result<PredictSummary> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Config("predict needs at least one input image".into()));
    }
    let weights_path = require_path(cfg.weights.as_deref(), "paths.weights")?;
    let net = load_network(weights_path, &cfg.model)?;

    // The cascade's box detector is configuration, so its annotation source
    // is checked before any image is touched.
    let boxes: Option<HashMap<String, KeypointSet>> = match cfg.pipeline_mode {
        PipelineMode::EndToEnd => None,
        PipelineMode::Cascade => {
            let path = require_path(cfg.annotations.as_deref(), "paths.annotations").map_err(
                |_| {
                    Error::Config(
                        "pipeline.mode = cascade needs paths.annotations for its box detector"
                            .into(),
                    )
                },
            )?;
            let mut map = HashMap::new();
            for record in load_annotations_file(path)? {
                let kp = record.to_keypoints()?;
                map.insert(record.image, kp);
            }
            Some(map)
        }
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let overlay_dir = cfg.out_dir.join("overlays");
    if overlay {
        std::fs::create_dir_all(&overlay_dir)?;
    }

    let mut records: Vec<PredictionRecord> = Vec::new();
    let mut failures: Vec<ErrorEntry> = Vec::new();
    for path in inputs {
        let id = image_id(path);
        let outcome = predict_one(&net, cfg, path, boxes.as_ref()).and_then(|(image, est)| {
            if overlay {
                save_png(overlay_dir.join(&id), &draw_overlay(&image, &est)?)?;
            }
            Ok(est.to_record(&id))
        });
        match outcome {
            Ok(record) => records.push(record),
            Err(e) => failures.push(ErrorEntry { image: id, error: e.to_string() }),
        }
    }

    let predictions = cfg.out_dir.join(PREDICTIONS_FILE);
    write_predictions(&predictions, &records)?;
    let errors_path = cfg.out_dir.join(ERRORS_FILE);
    if failures.is_empty() {
        // A leftover error file from an earlier run would misreport this one.
        match std::fs::remove_file(&errors_path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
            _ => {}
        }
    } else {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&errors_path)?);
        for entry in &failures {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    let summary = PredictSummary {
        records: records.len(),
        failures: failures.len(),
        predictions,
        overlays: overlay.then_some(overlay_dir),
    };
    println!(
        "predict: {} ok, {} failed -> {}",
        summary.records,
        summary.failures,
        summary.predictions.display()
    );
    Ok(summary)
}

fn set_px(data: &mut Array3<f64>, x: i64, y: i64, color: [f64; 3]) {
    let (c, h, w) = data.dim();
    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
        return;
    }
    for ch in 0..c.min(3) {
        data[[ch, y as usize, x as usize]] = color[ch];
    }
}

fn draw_square(data: &mut Array3<f64>, center: (f64, f64), radius: i64, color: [f64; 3]) {
    let (cx, cy) = (center.0.round() as i64, center.1.round() as i64);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            set_px(data, cx + dx, cy + dy, color);
        }
    }
}

fn draw_line(data: &mut Array3<f64>, a: (f64, f64), b: (f64, f64), color: [f64; 3]) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize;
    if steps == 0 {
        set_px(data, a.0.round() as i64, a.1.round() as i64, color);
        return;
    }
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        set_px(data, x.round() as i64, y.round() as i64, color);
    }
}

/// Copies the image and paints the estimate onto it: green skeleton edges,
/// then red squares on the visible joints. Out-of-canvas points are clipped.
pub fn draw_overlay(image: &ImageBuffer, est: &PoseEstimate) -> Result<ImageBuffer> {
    const EDGE: [f64; 3] = [0.1, 0.9, 0.2];
    const JOINT: [f64; 3] = [0.95, 0.1, 0.1];
    let mut data = image.data().clone();
    for (a, b) in &est.edges {
        let pa = est.keypoints.joint(*a);
        let pb = est.keypoints.joint(*b);
        draw_line(&mut data, (pa.x, pa.y), (pb.x, pb.y), EDGE);
    }
    for joint in est.keypoints.joints.iter().filter(|j| j.visible) {
        draw_square(&mut data, (joint.x, joint.y), 2, JOINT);
    }
    ImageBuffer::new(data)
}

/// Pairs predictions with annotations by image id, in annotation order.
/// Any id on one side only fails the whole join, listing every missing id.
fn join_by_id(
    records: &[PredictionRecord],
    annotations: &[AnnotationRecord],
) -> Result<(Vec<KeypointSet>, Vec<KeypointSet>)> {
    let by_id: HashMap<&str, &PredictionRecord> =
        records.iter().map(|r| (r.image.as_str(), r)).collect();
    let known: std::collections::HashSet<&str> =
        annotations.iter().map(|a| a.image.as_str()).collect();
    let mut missing: Vec<String> = annotations
        .iter()
        .filter(|a| !by_id.contains_key(a.image.as_str()))
        .map(|a| a.image.clone())
        .collect();
    missing.extend(
        records.iter().filter(|r| !known.contains(r.image.as_str())).map(|r| r.image.clone()),
    );
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::IdMismatch { missing });
    }
    let mut preds = Vec::with_capacity(annotations.len());
    let mut gts = Vec::with_capacity(annotations.len());
    for a in annotations {
        preds.push(by_id[a.image.as_str()].to_keypoints()?);
        gts.push(a.to_keypoints()?);
    }
    Ok((preds, gts))
}

/// Scores predictions against the labeled dataset and writes `report.json`
/// plus `curve.csv`. With a prediction file, rows are joined to annotations
/// by image id. Without one, the configured weights are run over the dataset
/// directly and the report gains latency statistics.
pub fn cmd_eval(cfg: &RunConfig, predictions: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let data_dir = require_path(cfg.dataset_dir.as_deref(), "paths.dataset")?;
    let alphas = evaluation::default_alphas();
    let report = match predictions {
        Some(pred_path) => {
            if !pred_path.exists() {
                return Err(Error::Config(format!(
                    "prediction file does not exist: {}",
                    pred_path.display()
                )));
            }
            let records = read_predictions(pred_path)?;
            let annotations = load_annotations(data_dir)?;
            let (preds, gts) = join_by_id(&records, &annotations)?;
            evaluation::evaluate(&preds, &gts, &alphas)?
        }
        None => {
            let weights_path = require_path(cfg.weights.as_deref(), "paths.weights")?;
            let net = load_network(weights_path, &cfg.model)?;
            let entries = load_dataset(data_dir)?;
            let samples: Vec<Sample> = entries.into_iter().map(|e| e.sample).collect();
            evaluation::evaluate_model(
                &net,
                &samples,
                cfg.decoder_mode(),
                &alphas,
                cfg.bench_warmup,
                cfg.bench_reps,
            )?
        }
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    evaluation::write_curve_csv(cfg.out_dir.join("curve.csv"), &report.curve)?;
    evaluation::write_json(cfg.out_dir.join("report.json"), &report)?;
    let p = &report.pckh05;
    println!(
        "eval: {} samples, PCKh@0.5 shoulder {:.3} elbow {:.3} wrist {:.3} neck {:.3}",
        report.samples, p.shoulder, p.elbow, p.wrist, p.neck
    );
    Ok(report)
}

/// Benchmarks every `bench.grid` variant on the dataset and writes
/// `variants.csv` plus `variants.json`. Weights for a variant live at
/// `<weights_dir>/<name>.weights.bin`; when `bench.init_missing` is on,
/// absent files are created with seeded random weights, since latency does
/// not require training.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Vec<VariantRow>> {
    cfg.validate()?;
    if cfg.bench_grid.is_empty() {
        return Err(Error::Config("bench.grid is empty".into()));
    }
    let data_dir = require_path(cfg.dataset_dir.as_deref(), "paths.dataset")?;
    let entries = load_dataset(data_dir)?;
    let mut samples: Vec<Sample> = entries.into_iter().map(|e| e.sample).collect();
    samples.truncate(cfg.bench_max_samples);
    if samples.is_empty() {
        return Err(Error::Config("bench needs a nonempty dataset".into()));
    }

    let weights_dir =
        cfg.weights_dir.clone().unwrap_or_else(|| cfg.out_dir.join("bench_weights"));
    let mut variants = Vec::with_capacity(cfg.bench_grid.len());
    for &(stacks, order) in &cfg.bench_grid {
        let vcfg = cfg.variant_config(stacks, order);
        vcfg.validate()?;
        let path = weights_dir.join(format!("{}.weights.bin", vcfg.variant_name()));
        if !path.exists() && cfg.bench_init_missing {
            std::fs::create_dir_all(&weights_dir)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            Network::new(vcfg, &mut rng)?.export_store().save(&path)?;
        }
        variants.push((vcfg, path));
    }

    let rows = evaluation::compare_variants(
        &variants,
        &samples,
        cfg.decoder_mode(),
        cfg.bench_warmup,
        cfg.bench_reps,
    )?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    evaluation::write_variant_csv(cfg.out_dir.join("variants.csv"), &rows)?;
    evaluation::write_json(cfg.out_dir.join("variants.json"), &rows)?;
    for r in &rows {
        println!(
            "bench: {} mean {:.2} ms, median {:.2} ms, p95 {:.2} ms",
            r.variant, r.latency.mean_ms, r.latency.median_ms, r.latency.p95_ms
        );
    }
    Ok(rows)
}
