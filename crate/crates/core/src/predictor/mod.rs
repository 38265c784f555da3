//! Dual-input attention Seq2Seq acceleration predictor and its baselines.
//!
//! Samples pair a vehicle's own speed/acceleration history over the 100 m
//! before an anchor with environmental percentile rows, and target the
//! acceleration over the meters after it.

mod dataset;
mod manifest;
mod model;
mod task;
mod train;

pub use dataset::{build_samples, split_vehicles, EnvSpan, Part, Sample, SampleOptions, Split, SplitRatios};
pub use manifest::{Manifest, ManifestEntry};
pub use model::{build_model, Mode, Model, ModelConfig, ModelKind};
pub use task::{Batch, Normalizer, PredictionTask};
pub use train::{sample_mae, train, TrainConfig, TrainReport};

#[cfg(test)]
mod tests;
