//! Respiration trace and respiratory-rate estimation from speech.
//!
//! The pipeline runs from audio and chest-belt recordings through log mel
//! filterbank or precomputed embedding features into a Conv-LSTM regressor
//! trained on a concordance loss, and scores the result with breath-event
//! metrics. [`synth`] generates a corpus with known ground truth.

pub mod audio;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod fsio;
mod linalg;
pub mod manifest;
pub mod model;
pub mod respiration;
pub mod saliency;
pub mod segment;
pub mod synth;
pub mod training;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use eval::{BreathEvents, MetricsReport};
pub use features::{FeatureKind, FeatureMatrix};
pub use model::{ModelConfig, ModelParams};
pub use respiration::{BeltTrace, RespirationTrace};
pub use saliency::SaliencyReport;
pub use segment::Segment;
pub use training::{TrainConfig, TrainHistory};
