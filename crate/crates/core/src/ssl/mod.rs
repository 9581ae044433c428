//! Self-supervised objectives: InfoNCE, BYOL, VAE and DPC, plus the
//! temporal-persistency pairing and the MoCo key queue.

pub mod dpc;
pub mod objectives;
pub mod pairs;

pub use dpc::{dpc_step, split_blocks, DpcConfig, DpcHead, DpcStep};
pub use objectives::{
    byol_loss, dpc_batch, info_nce, info_nce_eps, vae_loss, ByolLoss, ContrastiveBatch, ContrastiveLoss, VaeLoss,
};
pub use pairs::{temporal_persistency_pairs, MocoQueue, PositiveMode};
