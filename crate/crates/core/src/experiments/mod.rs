//! Experiment workflow: configuration, per-seed runs, seed aggregation, the
//! ablation grid and evaluation.

pub mod aggregate;
pub mod config;
pub mod grid;
pub mod run;

pub use aggregate::{aggregate, median, median_curve, read_aggregate_csv, trailing_mean, write_aggregate_csv, AggregateRow};
pub use config::{EncoderSize, ExperimentConfig, HeadScale, KEYS};
pub use grid::{ablate, best_smoothed, min_max_normalize, parse_encoder_arg, GridCell, GridOutcome};
pub use run::{
    corpus_digest, evaluate_policy, gen_corpus, load_encoder, pretrain, train_agent, AgentSummary, CorpusSummary,
    EvalRow, EvalStat, EvalSummary, PretrainSummary, SeedRun,
};
