//! Frequency-domain backdoor attack toolkit.
//!
//! The crate trains small image classifiers, measures their per-frequency
//! sensitivity with Fourier heatmaps, synthesizes invisible spectral
//! poisoning filters from the most sensitive frequencies, poisons datasets,
//! trains backdoored models, and evaluates both the attack and
//! frequency-domain defenses against it.
//!
//! Module map:
//!
//! - [`nncore`]: tensors, a fixed small CNN, a convolutional autoencoder,
//!   backprop, SGD training, checkpointing, channel pruning
//! - [`spectral`]: unitary 2D DFT, center-shifting, Fourier bases,
//!   conjugate-mirror bookkeeping
//! - [`heatmap`]: Fourier sensitivity heatmaps and frequency selection
//!   (top-k / bottom-k / random)
//! - [`poisonkit`]: poisoning filters, invisibility calibration, dataset
//!   poisoning, and the attack pipelines (standard, multi-target,
//!   end-to-end, cross-filter)
//! - [`defensekit`]: JPEG-style compression and autoencoder defenses, the
//!   augmentation counter-attack, STRIP, heatmap-distance detection, and
//!   the pruning defense sweep
//! - [`metrics`]: CDA, ASR, PSNR, SSIM, mean l2, scaled-difference renders
//! - [`datahub`]: dataset ingestion (CIFAR-10 binary format, synthetic
//!   generator), deterministic subsets, poisoned-dataset persistence
//!
//! All floating-point state is `f64`; images are `C x H x W` in `[0, 1]`.

pub mod datahub;
pub mod defensekit;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod nncore;
pub mod poisonkit;
pub mod spectral;

pub use error::{Error, Result};
