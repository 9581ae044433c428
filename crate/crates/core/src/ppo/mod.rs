//! Synchronous PPO over simulator workers, training only the heads unless
//! asked to train the encoder as well.

pub mod losses;
pub mod policy;
pub mod rollout;
pub mod trainer;

pub use losses::{
    adaptive_kl_update, compute_gae, gaussian_entropy, gaussian_kl, gaussian_logp, normalize,
    ppo_surrogate, value_loss, SurrogateLoss,
};
pub use policy::{Policy, PolicyStep};
pub use rollout::{collect_rollouts, spawn_workers, FinishedEpisode, Fragment, RolloutBatch, Transition, Worker};
pub use trainer::{
    evaluate, mean_kl, minibatch_grads, random_encoder, read_episodes_csv, train, write_episodes_csv,
    write_iterations_csv, EpisodeRecord, Grads, IterationLog, LossParts, PpoConfig, Sample, TrainConfig,
    TrainOutcome,
};
