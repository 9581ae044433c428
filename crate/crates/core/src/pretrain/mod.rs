//! Offline encoder pretraining: clip corpora, augmentation, the four
//! scheme-specific update steps and frozen export.

pub mod augment;
pub mod dataset;
pub mod trainer;
pub mod vae;

pub use augment::{augment, sample_clip, sample_clip_pair, AugmentDraw, AugmentationParams};
pub use dataset::{generate_synthetic_corpus, ClipDataset, Video};
pub use trainer::{
    embedding_std, run_pretrain, write_metrics_csv, PretrainBatch, PretrainConfig, Pretrainer,
    Scheme, StepMetrics,
};
pub use vae::VaeModel;
