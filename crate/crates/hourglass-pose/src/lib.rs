//! 2-D upper-limb pose estimation with stacked hourglass networks, on the CPU,
//! with no deep-learning framework underneath.
//!
//! The crate covers the full loop: synthesizing labeled stick-figure scenes,
//! rendering Gaussian heatmap targets, training a stacked hourglass network
//! with intermediate supervision under RMSprop, decoding heatmaps back to
//! sub-pixel joint coordinates, and scoring predictions with PCKh. Everything
//! runs in `f64` on `ndarray`; forward and backward passes are hand-written so
//! gradients can be audited against finite differences.
//!
//! Seven joints are tracked, in fixed channel order: right wrist, right elbow,
//! right shoulder, neck, left shoulder, left elbow, left wrist.
//!
//! ```
//! use hourglass_pose::model::{ModelConfig, Network, UpsampleMode};
//! use hourglass_pose::decode::argmax_decode;
//! use hourglass_pose::heatmap::Heatmap;
//! use ndarray::Array4;
//! use rand_chacha::ChaCha8Rng;
//! use rand::SeedableRng;
//!
//! let cfg = ModelConfig {
//!     num_stacks: 1,
//!     hourglass_order: 1,
//!     channels: 8,
//!     num_joints: 7,
//!     input_side: 32,
//!     heatmap_side: 8,
//!     upsample: UpsampleMode::Deconv,
//! };
//! let net = Network::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
//! let image = Array4::zeros((1, 3, 32, 32));
//! let out = net.forward_eval(&image);
//! let last = out.heatmaps.last().unwrap();
//! assert_eq!(last.shape(), &[1, 7, 8, 8]);
//! let hm = Heatmap::new(last.index_axis(ndarray::Axis(0), 0).to_owned()).unwrap();
//! let decoded = argmax_decode(&hm).unwrap();
//! assert_eq!(decoded.joints.len(), 7);
//! ```
//!
//! The `hgpose` binary exposes the same functionality as subcommands:
//! `synth`, `train`, `predict`, `eval`, `bench`.

pub mod cli;
pub mod config;
pub mod decode;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod heatmap;
pub mod keypoints;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod training;

pub use error::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(doctest)]
mod book;
