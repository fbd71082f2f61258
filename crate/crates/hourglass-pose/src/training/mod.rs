//! Training: RMS-prop over mini-batches of augmented samples, the same
//! Gaussian targets supervising every stack, per-epoch checkpoints, and
//! bit-reproducible runs from a single seed.
//!
//! Reproducibility hinges on one rule: epoch e always draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `e + 1`, regardless of where
//! the process started. Resuming from the epoch-e checkpoint therefore
//! replays exactly the batches an uninterrupted run would have seen.

pub mod augment;
pub mod dataset;
pub mod optimizer;
pub mod synth;

pub use augment::{augment, AugmentConfig};
pub use optimizer::{rmsprop_update, RmsProp};
pub use synth::{generate_synthetic_sample, SyntheticSceneSpec};

use crate::decode::heatmap_to_input_transform;
use crate::geometry::ImageBuffer;
use crate::heatmap::{self, GaussianSpec, Heatmap, DEFAULT_SIGMA};
use crate::keypoints::KeypointSet;
use crate::model::params::{read_entry, read_exact, read_u32, write_entry, write_u32};
use crate::model::{ModelConfig, Network, ParameterStore, StackOutputs};
use crate::pipeline::prepare_input;
use crate::{Error, Result};
use ndarray::{Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// One labeled example in the original-image frame. The reference length
/// used for scoring travels inside the keypoint set.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: ImageBuffer,
    pub keypoints: KeypointSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Constant step size. Zero is allowed so a null update can be used as a
    /// plumbing diagnostic.
    pub learning_rate: f64,
    /// Squared-gradient decay of RMS-prop.
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    /// Target bump spread, heatmap pixels.
    pub sigma: f64,
    pub seed: u64,
    pub augmentations: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.00025,
            rho: 0.99,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 8,
            iterations_per_epoch: 125,
            sigma: DEFAULT_SIGMA,
            seed: 0,
            augmentations: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        RmsProp::new(self.learning_rate, self.rho, self.epsilon)?;
        GaussianSpec::new(self.sigma)?;
        if self.batch_size < 1 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if self.iterations_per_epoch < 1 {
            return Err(Error::contract("iterations_per_epoch must be at least 1"));
        }
        Ok(())
    }
}

fn check_shapes(outputs: &StackOutputs, targets: &[Heatmap]) -> Result<()> {
    if outputs.heatmaps.is_empty() {
        return Err(Error::contract("no stack outputs to score"));
    }
    if targets.is_empty() {
        return Err(Error::contract("no targets to score against"));
    }
    let (k, h, w) = targets[0].values.dim();
    for t in targets.iter() {
        if t.values.dim() != (k, h, w) {
            return Err(Error::contract("targets in one batch must share a shape"));
        }
    }
    for (s, stack) in outputs.heatmaps.iter().enumerate() {
        if stack.dim() != (targets.len(), k, h, w) {
            return Err(Error::contract(format!(
                "stack {s} produced {:?}, targets are {}x{k}x{h}x{w}",
                stack.dim(),
                targets.len()
            )));
        }
    }
    Ok(())
}

/// Intermediate supervision: every stack is scored against the same targets,
/// and the total is the sum over stacks of the batch-mean joint-mean MSE.
pub fn total_loss(outputs: &StackOutputs, targets: &[Heatmap]) -> Result<f64> {
    check_shapes(outputs, targets)?;
    let b = targets.len() as f64;
    let mut total = 0.0;
    for stack in &outputs.heatmaps {
        for (bi, target) in targets.iter().enumerate() {
            let pred = Heatmap::new(stack.index_axis(Axis(0), bi).to_owned())?;
            let (_, mean) = heatmap::mse_loss(&pred, target)?;
            total += mean / b;
        }
    }
    Ok(total)
}

/// d(total_loss)/d(stack output), one gradient tensor per stack.
pub fn total_loss_grads(outputs: &StackOutputs, targets: &[Heatmap]) -> Result<Vec<Array4<f64>>> {
    check_shapes(outputs, targets)?;
    let b = targets.len() as f64;
    let mut grads = Vec::with_capacity(outputs.heatmaps.len());
    for stack in &outputs.heatmaps {
        let mut g = Array4::zeros(stack.raw_dim());
        for (bi, target) in targets.iter().enumerate() {
            let pred = Heatmap::new(stack.index_axis(Axis(0), bi).to_owned())?;
            let gb = heatmap::mse_loss_grad(&pred, target)?;
            g.index_axis_mut(Axis(0), bi).assign(&(gb / b));
        }
        grads.push(g);
    }
    Ok(grads)
}

const OPT_MAGIC: &[u8; 8] = b"HGOPTST1";

/// Optimizer sidecar contents: the accumulator state plus the index of the
/// next epoch to run. Pairs with the weight container saved alongside it.
#[derive(Debug, Clone)]
pub struct OptCheckpoint {
    pub next_epoch: usize,
    pub state: Vec<(String, ArrayD<f64>)>,
}

pub fn save_optimizer_state(
    path: impl AsRef<Path>,
    next_epoch: usize,
    state: &[(String, ArrayD<f64>)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(OPT_MAGIC)?;
    write_u32(&mut w, next_epoch)?;
    write_u32(&mut w, state.len())?;
    for (name, a) in state {
        write_entry(&mut w, name, a)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_optimizer_state(path: impl AsRef<Path>) -> Result<OptCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != OPT_MAGIC {
        return Err(Error::Container("not an optimizer checkpoint".into()));
    }
    let next_epoch = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mut state = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        state.push(read_entry(&mut r)?);
    }
    let mut probe = [0u8; 1];
    if read_exact(&mut r, &mut probe).is_ok() {
        return Err(Error::Container("trailing bytes after optimizer state".into()));
    }
    Ok(OptCheckpoint { next_epoch, state })
}

/// Final weights plus the mean loss of each epoch this call executed.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: ParameterStore,
    pub losses: Vec<f64>,
}

/// Trains from scratch. See [`train_from`] for the artifacts written.
pub fn train(
    net: &mut Network,
    dataset: &[Sample],
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
) -> Result<TrainOutcome> {
    train_from(net, dataset, cfg, out_dir, 0, None)
}

/// Runs epochs `start_epoch..cfg.epochs`, sampling batches with replacement.
///
/// Writes into `out_dir`: `checkpoint_{e:04}.weights.bin` and
/// `checkpoint_{e:04}.opt.bin` after each epoch e, a running `loss.csv`
/// (header `epoch,mean_loss`, one row per epoch, appended on resume), and
/// `weights.bin` with the final parameters. A non-finite loss or gradient
/// aborts with `Error::Diverged` after saving
/// `checkpoint_diverged.weights.bin`; parameters are still finite at that
/// point because every applied update was built from checked values.
pub fn train_from(
    net: &mut Network,
    dataset: &[Sample],
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
    start_epoch: usize,
    optimizer_state: Option<Vec<(String, ArrayD<f64>)>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("training dataset is empty"));
    }
    if start_epoch > cfg.epochs {
        return Err(Error::contract(format!(
            "start epoch {start_epoch} is past the configured {} epochs",
            cfg.epochs
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let spec = GaussianSpec::new(cfg.sigma)?;
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rho, cfg.epsilon)?;
    if let Some(state) = optimizer_state {
        opt.load_state(state);
    }

    let csv_path = out_dir.join("loss.csv");
    let mut csv = if start_epoch == 0 || !csv_path.exists() {
        let mut f = BufWriter::new(File::create(&csv_path)?);
        writeln!(f, "epoch,mean_loss")?;
        f
    } else {
        BufWriter::new(OpenOptions::new().append(true).open(&csv_path)?)
    };

    let mut losses = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut sum = 0.0;
        for _ in 0..cfg.iterations_per_epoch {
            let (input, targets) = build_batch(dataset, cfg, net.config(), spec, &mut rng)?;
            let outputs = net.forward_train(&input)?;
            let loss = total_loss(&outputs, &targets)?;
            if !loss.is_finite() {
                net.export_store().save(out_dir.join("checkpoint_diverged.weights.bin"))?;
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            let grads = total_loss_grads(&outputs, &targets)?;
            net.zero_grads();
            net.backward(&grads)?;
            if let Err(e) = opt.step(net) {
                if matches!(e, Error::Diverged(_)) {
                    net.export_store().save(out_dir.join("checkpoint_diverged.weights.bin"))?;
                }
                return Err(e);
            }
            sum += loss;
        }
        let mean = sum / cfg.iterations_per_epoch as f64;
        losses.push(mean);
        net.export_store().save(out_dir.join(format!("checkpoint_{epoch:04}.weights.bin")))?;
        save_optimizer_state(
            out_dir.join(format!("checkpoint_{epoch:04}.opt.bin")),
            epoch + 1,
            opt.state(),
        )?;
        writeln!(csv, "{epoch},{mean}")?;
        csv.flush()?;
    }

    let store = net.export_store();
    store.save(out_dir.join("weights.bin"))?;
    Ok(TrainOutcome { store, losses })
}

/// Samples one batch (with replacement), augments, letterboxes to the input
/// side, and renders heatmap-frame targets.
fn build_batch(
    dataset: &[Sample],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    spec: GaussianSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Array4<f64>, Vec<Heatmap>)> {
    let input_side = model_cfg.input_side;
    let hm_side = model_cfg.heatmap_side;
    let input_to_heatmap = heatmap_to_input_transform(input_side, hm_side)?.inverse();
    let mut input = Array4::zeros((cfg.batch_size, 3, input_side, input_side));
    let mut targets = Vec::with_capacity(cfg.batch_size);
    for bi in 0..cfg.batch_size {
        let pick = rng.gen_range(0..dataset.len());
        let sample = augment(&dataset[pick], &cfg.augmentations, rng)?;
        if sample.image.channels() != 3 {
            return Err(Error::contract("training images must have 3 channels"));
        }
        let (prepared, to_input) = prepare_input(&sample.image, input_side)?;
        input.index_axis_mut(Axis(0), bi).assign(prepared.data());
        let t = to_input.then(&input_to_heatmap);
        let kp = sample.keypoints.map_positions(|p| t.apply(p));
        targets.push(heatmap::render_targets(&kp, hm_side, hm_side, spec)?);
    }
    Ok((input, targets))
}
