//! Spatiotemporal 3D-conv encoder, projection and prediction MLPs, and
//! frozen checkpoints.

pub mod backbone;
pub mod checkpoint;

pub use crate::nn::momentum_update;
pub use backbone::{clips_to_tensor, Embedding, Encoder, EncoderConfig, FeatureMap, Predictor};
pub use checkpoint::{
    checkpoint_container, checkpoint_from_container, load_checkpoint, save_checkpoint,
    EncoderCheckpoint, SchemeTag, ShapeContract,
};
