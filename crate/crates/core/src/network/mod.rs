//! The multi-task chorus/boundary CNN in its temporal and scalar variants.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
mod ops;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_variant, read_checkpoint, save_checkpoint};
pub use config::{ModelConfig, Variant};
pub use loss::{bce, multitask_loss, Targets};
pub use model::{backward, forward, forward_batch, predict_chunks, Forward, Mode};
pub use params::{init_model, manifest, ModelParams, Real, Tensor};
pub use train::{examples_from_chunks, train, train_with, Example, TrainOutcome, Trainer};
