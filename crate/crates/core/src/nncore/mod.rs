//! Minimal neural-network substrate.
//!
//! Everything the attack pipeline needs and nothing more: a dense `f64`
//! tensor, conv / pool / linear / transposed-conv layers with hand-written
//! backprop, a fixed small CNN classifier, a small convolutional
//! autoencoder, seeded SGD training, binary checkpointing, and channel
//! pruning. No autodiff graph; each model wires its own backward pass.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod prune;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use models::{Classifier, ConvAutoencoder, SmallConvNet};
pub use prune::{activation_ranking, prune_neurons};
pub use tensor::{ImageTensor, Tensor};
pub use train::{
    autoencoder_mse, train_autoencoder, train_classifier, train_classifier_stoppable,
    train_classifier_with, EpochStats, LrSchedule, TrainConfig, TrainHistory,
};
