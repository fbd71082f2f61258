//! Flat key-value run configuration.
//!
//! The on-disk format is one `section.key = value` pair per line, with `#`
//! comments and blank lines ignored. Dotted prefixes group keys by the module
//! they configure; there is no nesting beyond the prefix. Unknown keys are
//! errors so a typo cannot silently fall back to a default. Command-line
//! flags are applied after the file, so they win.

use crate::decode::{DecoderMode, DEFAULT_INTEGRAL_GAIN};
use crate::keypoints::NUM_JOINTS;
use crate::model::{ModelConfig, UpsampleMode};
use crate::training::{SyntheticSceneSpec, TrainConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Resize the whole image and estimate directly.
    EndToEnd,
    /// Detect a person box first, crop, then estimate on the crop.
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Argmax,
    Integral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SyntheticSceneSpec,
    /// Samples written by the synth command.
    pub synth_count: usize,
    /// Labeled dataset directory (annotations plus images).
    pub dataset_dir: Option<PathBuf>,
    /// Weight container for predict/eval.
    pub weights: Option<PathBuf>,
    /// Directory holding per-variant weights for bench.
    pub weights_dir: Option<PathBuf>,
    /// Annotation file for the cascade's ground-truth box detector.
    pub annotations: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub decoder_kind: DecoderKind,
    pub decoder_gain: f64,
    pub pipeline_mode: PipelineMode,
    /// Padding around the ground-truth joint box, original pixels.
    pub detector_margin: f64,
    /// (stacks, order) pairs for bench.
    pub bench_grid: Vec<(usize, usize)>,
    pub bench_warmup: usize,
    pub bench_reps: usize,
    /// Cap on evaluation samples per bench variant.
    pub bench_max_samples: usize,
    /// Let bench create seeded random weights for grid variants that have
    /// no file yet (latency does not require training).
    pub bench_init_missing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            // desk-scale preset: small enough to train on one CPU core
            model: ModelConfig {
                num_stacks: 2,
                hourglass_order: 1,
                channels: 64,
                num_joints: NUM_JOINTS,
                input_side: 128,
                heatmap_side: 32,
                upsample: UpsampleMode::Deconv,
            },
            train: TrainConfig::default(),
            scene: SyntheticSceneSpec::default(),
            synth_count: 2000,
            dataset_dir: None,
            weights: None,
            weights_dir: None,
            annotations: None,
            out_dir: PathBuf::from("out"),
            decoder_kind: DecoderKind::Integral,
            decoder_gain: DEFAULT_INTEGRAL_GAIN,
            pipeline_mode: PipelineMode::EndToEnd,
            detector_margin: 8.0,
            bench_grid: Vec::new(),
            bench_warmup: 3,
            bench_reps: 12,
            bench_max_samples: 64,
            bench_init_missing: true,
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key `{key}`: cannot parse `{value}` as {want}"))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| bad(key, value, "a nonnegative integer"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| bad(key, value, "a nonnegative integer"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value.parse().map_err(|_| bad(key, value, "a number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

/// Accepts `sh{S}{O}` shorthand (single digits, as in the model grid) or
/// `{stacks}x{order}` for anything larger.
pub fn parse_variant(item: &str) -> Result<(usize, usize)> {
    let item = item.trim();
    if let Some(rest) = item.strip_prefix("sh") {
        let digits: Vec<u32> = rest.chars().filter_map(|c| c.to_digit(10)).collect();
        if digits.len() == 2 && rest.len() == 2 {
            return Ok((digits[0] as usize, digits[1] as usize));
        }
    }
    if let Some((a, b)) = item.split_once('x') {
        if let (Ok(s), Ok(o)) = (a.trim().parse(), b.trim().parse()) {
            return Ok((s, o));
        }
    }
    Err(Error::Config(format!(
        "cannot parse variant `{item}`; use sh21 or 2x1 style"
    )))
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1))
            })?;
            self.apply(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Sets one key. This is also the override hook the CLI flags use.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.num_stacks" => self.model.num_stacks = parse_usize(key, value)?,
            "model.hourglass_order" => self.model.hourglass_order = parse_usize(key, value)?,
            "model.channels" => self.model.channels = parse_usize(key, value)?,
            "model.num_joints" => self.model.num_joints = parse_usize(key, value)?,
            "model.input_side" => self.model.input_side = parse_usize(key, value)?,
            "model.heatmap_side" => self.model.heatmap_side = parse_usize(key, value)?,
            "model.upsample" => {
                self.model.upsample = match value {
                    "nearest" => UpsampleMode::Nearest,
                    "deconv" => UpsampleMode::Deconv,
                    _ => return Err(bad(key, value, "nearest or deconv")),
                }
            }
            "train.learning_rate" => self.train.learning_rate = parse_f64(key, value)?,
            "train.rho" => self.train.rho = parse_f64(key, value)?,
            "train.epsilon" => self.train.epsilon = parse_f64(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_usize(key, value)?,
            "train.epochs" => self.train.epochs = parse_usize(key, value)?,
            "train.iterations_per_epoch" => {
                self.train.iterations_per_epoch = parse_usize(key, value)?
            }
            "train.sigma" => self.train.sigma = parse_f64(key, value)?,
            "train.seed" => self.train.seed = parse_u64(key, value)?,
            "train.augment.random_crop" => {
                self.train.augmentations.random_crop = parse_bool(key, value)?
            }
            "train.augment.color_dither" => {
                self.train.augmentations.color_dither = parse_bool(key, value)?
            }
            "train.augment.rotation" => {
                self.train.augmentations.rotation = parse_bool(key, value)?
            }
            "train.augment.crop_scale_min" => {
                self.train.augmentations.crop_scale_range.0 = parse_f64(key, value)?
            }
            "train.augment.crop_scale_max" => {
                self.train.augmentations.crop_scale_range.1 = parse_f64(key, value)?
            }
            "train.augment.dither_min" => {
                self.train.augmentations.dither_range.0 = parse_f64(key, value)?
            }
            "train.augment.dither_max" => {
                self.train.augmentations.dither_range.1 = parse_f64(key, value)?
            }
            "train.augment.rotation_max_deg" => {
                self.train.augmentations.rotation_max_deg = parse_f64(key, value)?
            }
            "scene.canvas" => self.scene.canvas = parse_usize(key, value)?,
            "scene.torso_length" => self.scene.torso_length = parse_f64(key, value)?,
            "scene.clavicle_length" => self.scene.clavicle_length = parse_f64(key, value)?,
            "scene.upper_arm_length" => self.scene.upper_arm_length = parse_f64(key, value)?,
            "scene.forearm_length" => self.scene.forearm_length = parse_f64(key, value)?,
            "scene.limb_width" => self.scene.limb_width = parse_f64(key, value)?,
            "scene.torso_width" => self.scene.torso_width = parse_f64(key, value)?,
            "scene.torso_sway" => self.scene.torso_sway = parse_f64(key, value)?,
            "scene.shoulder_min" => self.scene.shoulder_range.0 = parse_f64(key, value)?,
            "scene.shoulder_max" => self.scene.shoulder_range.1 = parse_f64(key, value)?,
            "scene.elbow_bend" => self.scene.elbow_bend = parse_f64(key, value)?,
            "scene.noise_level" => self.scene.noise_level = parse_f64(key, value)?,
            "scene.color_jitter" => self.scene.color_jitter = parse_f64(key, value)?,
            "synth.count" => self.synth_count = parse_usize(key, value)?,
            "paths.dataset" => self.dataset_dir = Some(PathBuf::from(value)),
            "paths.weights" => self.weights = Some(PathBuf::from(value)),
            "paths.weights_dir" => self.weights_dir = Some(PathBuf::from(value)),
            "paths.annotations" => self.annotations = Some(PathBuf::from(value)),
            "paths.out" => self.out_dir = PathBuf::from(value),
            "decoder.mode" => {
                self.decoder_kind = match value {
                    "argmax" => DecoderKind::Argmax,
                    "integral" => DecoderKind::Integral,
                    _ => return Err(bad(key, value, "argmax or integral")),
                }
            }
            "decoder.gain" => self.decoder_gain = parse_f64(key, value)?,
            "pipeline.mode" => {
                self.pipeline_mode = match value {
                    "end_to_end" => PipelineMode::EndToEnd,
                    "cascade" => PipelineMode::Cascade,
                    _ => return Err(bad(key, value, "end_to_end or cascade")),
                }
            }
            "pipeline.margin" => self.detector_margin = parse_f64(key, value)?,
            "bench.grid" => {
                self.bench_grid =
                    value.split(',').map(parse_variant).collect::<Result<Vec<_>>>()?
            }
            "bench.warmup" => self.bench_warmup = parse_usize(key, value)?,
            "bench.reps" => self.bench_reps = parse_usize(key, value)?,
            "bench.samples" => self.bench_max_samples = parse_usize(key, value)?,
            "bench.init_missing" => self.bench_init_missing = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Cheap structural checks, run before any heavy work starts.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        if !(self.decoder_gain.is_finite() && self.decoder_gain > 0.0) {
            return Err(Error::Config(format!(
                "decoder.gain must be finite and positive, got {}",
                self.decoder_gain
            )));
        }
        Ok(())
    }

    pub fn decoder_mode(&self) -> DecoderMode {
        match self.decoder_kind {
            DecoderKind::Argmax => DecoderMode::Argmax,
            DecoderKind::Integral => DecoderMode::Integral { gain: self.decoder_gain },
        }
    }

    /// Model config for one bench grid entry: stacks and order swapped in,
    /// everything else inherited.
    pub fn variant_config(&self, stacks: usize, order: usize) -> ModelConfig {
        ModelConfig { num_stacks: stacks, hourglass_order: order, ..self.model }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn a_full_file_parses_into_every_section() {
        let text = "\
# desk run
model.num_stacks = 1
model.channels = 32
model.input_side = 64
model.heatmap_side = 16
model.upsample = nearest

train.learning_rate = 0.001
train.epochs = 3
train.seed = 42
train.augment.rotation = false
train.augment.crop_scale_min = 0.6

scene.canvas = 96
scene.torso_length = 24
scene.clavicle_length = 9
scene.upper_arm_length = 11
scene.forearm_length = 10

synth.count = 25
paths.dataset = data/train
paths.out = runs/a
decoder.mode = argmax
pipeline.mode = cascade
pipeline.margin = 4.5
bench.grid = sh21, sh41
bench.reps = 15
";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.model.num_stacks, 1);
        assert_eq!(cfg.model.channels, 32);
        assert_eq!(cfg.model.upsample, UpsampleMode::Nearest);
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.seed, 42);
        assert!(!cfg.train.augmentations.rotation);
        assert_eq!(cfg.train.augmentations.crop_scale_range.0, 0.6);
        assert_eq!(cfg.scene.canvas, 96);
        assert_eq!(cfg.synth_count, 25);
        assert_eq!(cfg.dataset_dir.as_deref(), Some(Path::new("data/train")));
        assert_eq!(cfg.out_dir, PathBuf::from("runs/a"));
        assert_eq!(cfg.decoder_kind, DecoderKind::Argmax);
        assert_eq!(cfg.pipeline_mode, PipelineMode::Cascade);
        assert_eq!(cfg.detector_margin, 4.5);
        assert_eq!(cfg.bench_grid, vec![(2, 1), (4, 1)]);
        assert_eq!(cfg.bench_reps, 15);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::parse_str("model.stakcs = 2\n").unwrap_err();
        assert!(err.to_string().contains("model.stakcs"), "{err}");
    }

    #[test]
    fn bad_values_name_the_key_and_line() {
        let err = RunConfig::parse_str("\n\nmodel.num_stacks = two\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 3"), "{text}");
        assert!(text.contains("model.num_stacks"), "{text}");
    }

    #[test]
    fn missing_equals_is_an_error() {
        let err = RunConfig::parse_str("model.num_stacks 2\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn later_applications_override_earlier_ones() {
        let mut cfg = RunConfig::parse_str("train.seed = 5\n").unwrap();
        cfg.apply("train.seed", "9").unwrap();
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn grid_shorthand_and_explicit_forms_agree() {
        assert_eq!(parse_variant("sh84").unwrap(), (8, 4));
        assert_eq!(parse_variant("8x4").unwrap(), (8, 4));
        assert_eq!(parse_variant("12x2").unwrap(), (12, 2));
        assert!(parse_variant("sh8").is_err());
        assert!(parse_variant("hg21").is_err());
    }

    #[test]
    fn decoder_mode_maps_kind_and_gain() {
        let mut cfg = RunConfig::default();
        cfg.apply("decoder.gain", "4.0").unwrap();
        assert_eq!(cfg.decoder_mode(), DecoderMode::Integral { gain: 4.0 });
        cfg.apply("decoder.mode", "argmax").unwrap();
        assert_eq!(cfg.decoder_mode(), DecoderMode::Argmax);
    }

    #[test]
    fn structural_model_violations_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.apply("model.input_side", "100").unwrap(); // not 4 * heatmap_side
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_config_inherits_everything_else() {
        let cfg = RunConfig::default();
        let v = cfg.variant_config(8, 4);
        assert_eq!(v.num_stacks, 8);
        assert_eq!(v.hourglass_order, 4);
        assert_eq!(v.channels, cfg.model.channels);
        assert_eq!(v.input_side, cfg.model.input_side);
    }
}
