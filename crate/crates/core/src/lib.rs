//! Arbitrary-modality salient object detection at desk scale.
//!
//! One model accepts any non-empty subset of the known modalities (RGB,
//! depth, thermal, ...) per input. A prompt-conditioned pyramid Transformer
//! extracts per-modality features, variable-arity fusion modules combine
//! them spatially or channel-wise per level, and a coarse-to-fine decoder
//! emits the saliency map. The crate also ships the synthetic registered
//! dataset generator, the training loop and the evaluation protocol.

pub mod autodiff;
pub mod config;
pub mod decoder;
pub mod error;
pub mod fusion;
pub mod imgio;
pub mod losses;
pub mod mafe;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod synthdata;
pub mod types;

pub use config::{ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use model::Model;
pub use types::{
    ComboLabel, FeaturePyramid, ModalityKind, MultimodalSample, SaliencyPrediction,
};
