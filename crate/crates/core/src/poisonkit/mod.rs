//! Poisoning-filter synthesis, invisibility calibration, dataset
//! poisoning, and the attack pipelines.

pub mod calibrate;
pub mod dataset;
pub mod filter;
pub mod pipeline;

pub use calibrate::{calibrate_magnitudes, calibrate_magnitudes_with_ssim, CalibrationRecord, DEFAULT_RATIOS};
pub use dataset::{poison_dataset, PoisonedDataset};
pub use filter::{
    build_filter, partition_multitarget, MaskValues, MultiTargetFilter, PoisonFilter,
};
pub use pipeline::{
    apply_foreign_filter, run_attack_pipeline, run_end_to_end, AttackConfig, AttackOutcome,
    EndToEndConfig,
};
