//! Supervised chorus detection.
//!
//! The pipeline turns audio into log-mel features, trains a multi-task CNN
//! that predicts chorus and boundary activation curves over fixed-size
//! chunks, merges overlapping chunk predictions into song-level curves and
//! decodes them into chorus segments using boundary peaks and per-segment
//! chorus likelihood.
//!
//! ```text
//! Waveform -> features::log_mel -> chunking -> network::forward
//!          -> inference::predict_song -> postprocess::binarize -> SegmentList
//! ```

pub mod annotations;
pub mod chunking;
pub mod dataset;
pub mod error;
pub mod features;
pub mod inference;
pub mod metrics;
pub mod network;
pub mod postprocess;
pub mod rng;
pub mod synthdata;

pub use annotations::{ActivationCurve, Segment, SegmentList};
pub use error::{Error, Result};
pub use features::{MelSpectrogram, Waveform};
pub use network::{ModelConfig, ModelParams, Variant};
