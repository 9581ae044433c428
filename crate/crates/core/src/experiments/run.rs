//! The workflow steps behind the command-line tool. Every step writes its
//! outputs under one directory:
//!
//! ```text
//! gen-corpus   <out>/video_*/...
//! pretrain     <out>/encoder.ckpt, <out>/pretrain_metrics.csv
//! train-agent  <out>/config.txt, <out>/aggregate.csv,
//!              <out>/seed_<s>/{episodes.csv, iterations.csv, policy.ckpt}
//! evaluate     <out>/evaluation.csv, <out>/evaluation_summary.csv
//! ```

use std::path::{Path, PathBuf};

use crate::encoder::{load_checkpoint, EncoderCheckpoint};
use crate::error::{Error, Result};
use crate::heads::{HeadVariant, PolicyCheckpoint};
use crate::ppo::{
    evaluate, random_encoder, train, write_episodes_csv, write_iterations_csv, EpisodeRecord, Policy,
};
use crate::pretrain::{generate_synthetic_corpus, run_pretrain, write_metrics_csv, ClipDataset, StepMetrics};
use crate::sim::EpisodeStats;

use super::aggregate::{aggregate, median, write_aggregate_csv, AggregateRow};
use super::config::ExperimentConfig;

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub videos: usize,
    pub frames: usize,
    pub digest: u32,
}

/// CRC32 over every file under `root`, visited in sorted path order, with
/// the relative paths mixed in.
pub fn corpus_digest(root: &Path) -> Result<u32> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = e.map_err(|e| Error::io(dir, e))?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    files.sort();
    let mut h = crc32fast::Hasher::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update(&std::fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(h.finalize())
}

pub fn gen_corpus(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<CorpusSummary> {
    let ds = generate_synthetic_corpus(
        out,
        cfg.corpus_videos,
        cfg.corpus_frames,
        seed,
        &cfg.world,
        &cfg.corpus_routes,
    )?;
    Ok(CorpusSummary {
        videos: ds.len(),
        frames: ds.videos.iter().map(|v| v.len()).sum(),
        digest: corpus_digest(out)?,
    })
}

#[derive(Debug, Clone)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics: Vec<StepMetrics>,
    pub encoder: EncoderCheckpoint,
}

impl PretrainSummary {
    pub fn collapsed(&self) -> bool {
        self.metrics.iter().any(StepMetrics::collapsed)
    }
}

pub fn pretrain(cfg: &ExperimentConfig, seed: u64, corpus: &Path, out: &Path) -> Result<PretrainSummary> {
    let ds = ClipDataset::load(corpus)?;
    create_dir(out)?;
    let pc = cfg.pretrain_config(seed);
    let scheme = pc.scheme;
    let (trainer, metrics) = run_pretrain(pc, &ds)?;
    let checkpoint = out.join("encoder.ckpt");
    let metrics_csv = out.join("pretrain_metrics.csv");
    let encoder = trainer.freeze_and_export(&checkpoint)?;
    write_metrics_csv(&metrics_csv, scheme, &metrics)?;
    Ok(PretrainSummary {
        checkpoint,
        metrics_csv,
        metrics,
        encoder,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub episodes: Vec<EpisodeRecord>,
    pub policy: PolicyCheckpoint,
}

impl SeedRun {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.stats.total_reward).collect()
    }

    /// Mean reward of the last `n` episodes (all of them if fewer).
    pub fn final_mean(&self, n: usize) -> f64 {
        let r = self.rewards();
        let tail = &r[r.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct AgentSummary {
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<AggregateRow>,
    pub aggregate_csv: PathBuf,
}

/// Trains one agent per seed and aggregates their episode rewards.
///
/// Frozen runs need `encoder`. End-to-end runs start from it when given and
/// from a seeded random encoder otherwise.
pub fn train_agent(
    cfg: &ExperimentConfig,
    encoder: Option<&EncoderCheckpoint>,
    variant: HeadVariant,
    seeds: &[u64],
    end_to_end: bool,
    serial: bool,
    out: &Path,
) -> Result<AgentSummary> {
    if seeds.is_empty() {
        return Err(Error::config("train-agent needs at least one seed"));
    }
    if encoder.is_none() && !end_to_end {
        return Err(Error::config("a frozen-encoder run needs an encoder checkpoint"));
    }
    create_dir(out)?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let start = match encoder {
            Some(e) => e.clone(),
            None => random_encoder(&cfg.encoder_config(), seed)?,
        };
        let tc = cfg.train_config(variant, seed, end_to_end, serial);
        log::info!("training {variant} seed {seed} ({})", if end_to_end { "end-to-end" } else { "frozen" });
        let outcome = train(&tc, &start)?;
        let dir = out.join(format!("seed_{seed}"));
        create_dir(&dir)?;
        write_episodes_csv(&dir.join("episodes.csv"), &outcome.episodes)?;
        write_iterations_csv(&dir.join("iterations.csv"), &outcome.iterations)?;
        let policy = outcome.policy.to_checkpoint(end_to_end);
        policy.save(&dir.join("policy.ckpt"))?;
        runs.push(SeedRun {
            seed,
            dir,
            episodes: outcome.episodes,
            policy,
        });
    }
    let rewards: Vec<Vec<f64>> = runs.iter().map(SeedRun::rewards).collect();
    let rows = aggregate(&rewards, cfg.smoothing_window)?;
    let aggregate_csv = out.join("aggregate.csv");
    write_aggregate_csv(&aggregate_csv, &rows)?;
    Ok(AgentSummary {
        runs,
        aggregate: rows,
        aggregate_csv,
    })
}

pub fn load_encoder(path: &Path) -> Result<EncoderCheckpoint> {
    load_checkpoint(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub seed: u64,
    pub stats: EpisodeStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStat {
    pub reward: f64,
    pub steps: f64,
    pub lane_invasions: f64,
    pub collisions: f64,
}

fn stat(rows: &[EvalRow], f: impl Fn(&[f64]) -> Result<f64>) -> Result<EvalStat> {
    let col = |g: &dyn Fn(&EpisodeStats) -> f64| rows.iter().map(|r| g(&r.stats)).collect::<Vec<_>>();
    Ok(EvalStat {
        reward: f(&col(&|s| s.total_reward))?,
        steps: f(&col(&|s| s.steps as f64))?,
        lane_invasions: f(&col(&|s| s.lane_invasions as f64))?,
        collisions: f(&col(&|s| s.collisions as f64))?,
    })
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Degenerate("mean of an empty slice".into()));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub mean: EvalStat,
    pub median: EvalStat,
}

/// `eval_episodes` episodes with the mean action, seeds counting up from
/// `eval_seed_base`.
pub fn evaluate_policy(cfg: &ExperimentConfig, ck: &PolicyCheckpoint, out: &Path) -> Result<EvalSummary> {
    if cfg.eval_episodes == 0 {
        return Err(Error::config("eval_episodes must be positive"));
    }
    let policy = Policy::from_checkpoint(ck)?;
    let seeds: Vec<u64> = (0..cfg.eval_episodes as u64).map(|i| cfg.eval_seed_base + i).collect();
    let stats = evaluate(&policy, &cfg.world, &seeds)?;
    let rows: Vec<EvalRow> = seeds.iter().zip(stats).map(|(&seed, stats)| EvalRow { seed, stats }).collect();
    let summary = EvalSummary {
        mean: stat(&rows, mean)?,
        median: stat(&rows, median)?,
        rows,
    };
    create_dir(out)?;
    let p = out.join("evaluation.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["episode", "seed", "reward", "steps", "lane_invasions", "collisions"])?;
    for (i, r) in summary.rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.seed.to_string(),
            r.stats.total_reward.to_string(),
            r.stats.steps.to_string(),
            r.stats.lane_invasions.to_string(),
            r.stats.collisions.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    let p = out.join("evaluation_summary.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["statistic", "reward", "steps", "lane_invasions", "collisions"])?;
    for (name, s) in [("mean", summary.mean), ("median", summary.median)] {
        w.write_record([
            name.to_string(),
            s.reward.to_string(),
            s.steps.to_string(),
            s.lane_invasions.to_string(),
            s.collisions.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(summary)
}
