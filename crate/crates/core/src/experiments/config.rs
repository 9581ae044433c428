//! Flat `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are errors. Every key
//! with its default and meaning is listed in [`KEYS`]; `decoupled print-config`
//! prints the table as a ready-to-edit file.

use std::path::Path;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadVariant};
use crate::ppo::{PpoConfig, TrainConfig};
use crate::pretrain::{PretrainConfig, Scheme};
use crate::sim::{LaneCharge, RouteId, WorldConfig};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("route", "open-s-curve", "route for agent training and evaluation"),
    ("frame_size", "32", "square observation side in pixels"),
    ("max_steps", "400", "episode length without collisions"),
    ("lane_penalty", "2", "reward charged per lane invasion"),
    ("collision_penalty", "30", "reward charged on collision"),
    ("lane_charge", "per-step", "per-step | per-entry"),
    ("corpus_videos", "8", "videos in a generated corpus"),
    ("corpus_frames", "160", "frames per generated video"),
    ("corpus_routes", "straight,gentle-curve,s-curve,obstacle-course", "routes cycled by the corpus generator"),
    ("encoder", "tiny", "tiny (3 narrow stages) | full (32-64-128-256)"),
    ("scheme", "byol", "moco | byol | dpc | vae"),
    ("pretrain_steps", "200", "pretraining optimizer steps"),
    ("pretrain_lr", "0.001", "pretraining learning rate"),
    ("pretrain_batch", "8", "videos per pretraining step"),
    ("moco_queue", "64", "MoCo negative queue length"),
    ("temperature", "0.1", "InfoNCE temperature"),
    ("target_momentum", "0.99", "momentum of the MoCo and BYOL target encoder"),
    ("episodes", "300", "episode budget per agent run (full scale: 1800)"),
    ("head_variant", "avg2D_s", "head kind and size, e.g. Pro1D_xl"),
    ("head_scale", "desk", "desk (conv /8, fc /4) | full widths"),
    ("lr", "0.001", "PPO learning rate (full scale: 2e-5)"),
    ("gamma", "0.9", "discount"),
    ("lambda", "0.95", "GAE lambda"),
    ("clip", "0.1", "surrogate clip epsilon"),
    ("vf_clip", "10", "value clip"),
    ("kl_coef", "0.3", "initial KL penalty coefficient"),
    ("kl_target", "0.03", "KL target of the adaptive coefficient"),
    ("sgd_iters", "3", "passes over each batch"),
    ("minibatch", "128", "minibatch size"),
    ("batch_size", "640", "transitions per iteration"),
    ("fragment_len", "64", "rollout fragment length"),
    ("workers", "4", "rollout workers"),
    ("entropy_coef", "0", "entropy bonus coefficient"),
    ("vf_coef", "1", "value loss coefficient"),
    ("normalize_advantages", "true", "standardize advantages per batch"),
    ("seeds", "0,1,2", "seeds of train-agent runs"),
    ("smoothing_window", "100", "trailing moving-average window in episodes"),
    ("eval_episodes", "10", "deterministic evaluation episodes"),
    ("eval_seed_base", "100000", "episode seed of the first evaluation episode"),
    ("ablate_seeds", "0", "seeds per ablation cell"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderSize {
    Tiny,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadScale {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub corpus_videos: usize,
    pub corpus_frames: usize,
    pub corpus_routes: Vec<RouteId>,
    pub encoder: EncoderSize,
    pub scheme: Scheme,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub moco_queue: usize,
    pub temperature: f64,
    pub target_momentum: f64,
    pub episodes: usize,
    pub head_variant: HeadVariant,
    pub head_scale: HeadScale,
    pub ppo: PpoConfig,
    pub seeds: Vec<u64>,
    pub smoothing_window: usize,
    pub eval_episodes: usize,
    pub eval_seed_base: u64,
    pub ablate_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut c = Self {
            world: WorldConfig::default(),
            corpus_videos: 0,
            corpus_frames: 0,
            corpus_routes: Vec::new(),
            encoder: EncoderSize::Tiny,
            scheme: Scheme::Byol,
            pretrain_steps: 0,
            pretrain_lr: 0.0,
            pretrain_batch: 0,
            moco_queue: 0,
            temperature: 0.0,
            target_momentum: 0.0,
            episodes: 0,
            head_variant: "avg2D_s".parse().expect("valid variant"),
            head_scale: HeadScale::Desk,
            ppo: PpoConfig::default(),
            seeds: Vec::new(),
            smoothing_window: 0,
            eval_episodes: 0,
            eval_seed_base: 0,
            ablate_seeds: Vec::new(),
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("defaults parse");
        }
        c
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.ppo;
        match key {
            "route" => self.world.route = v.parse()?,
            "frame_size" => self.world.frame_size = num(key, v)?,
            "max_steps" => self.world.max_steps = num(key, v)?,
            "lane_penalty" => self.world.lane_penalty = num(key, v)?,
            "collision_penalty" => self.world.collision_penalty = num(key, v)?,
            "lane_charge" => self.world.lane_charge = v.parse::<LaneCharge>()?,
            "corpus_videos" => self.corpus_videos = num(key, v)?,
            "corpus_frames" => self.corpus_frames = num(key, v)?,
            "corpus_routes" => {
                self.corpus_routes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "encoder" => {
                self.encoder = match v {
                    "tiny" => EncoderSize::Tiny,
                    "full" => EncoderSize::Full,
                    other => return Err(Error::config(format!("encoder: unknown size '{other}'"))),
                }
            }
            "scheme" => self.scheme = v.parse()?,
            "pretrain_steps" => self.pretrain_steps = num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = num(key, v)?,
            "pretrain_batch" => self.pretrain_batch = num(key, v)?,
            "moco_queue" => self.moco_queue = num(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "target_momentum" => self.target_momentum = num(key, v)?,
            "episodes" => self.episodes = num(key, v)?,
            "head_variant" => self.head_variant = v.parse()?,
            "head_scale" => {
                self.head_scale = match v {
                    "desk" => HeadScale::Desk,
                    "full" => HeadScale::Full,
                    other => return Err(Error::config(format!("head_scale: unknown scale '{other}'"))),
                }
            }
            "lr" => p.lr = num(key, v)?,
            "gamma" => p.gamma = num(key, v)?,
            "lambda" => p.lambda = num(key, v)?,
            "clip" => p.clip = num(key, v)?,
            "vf_clip" => p.vf_clip = num(key, v)?,
            "kl_coef" => p.kl_coef = num(key, v)?,
            "kl_target" => p.kl_target = num(key, v)?,
            "sgd_iters" => p.sgd_iters = num(key, v)?,
            "minibatch" => p.minibatch = num(key, v)?,
            "batch_size" => p.batch_size = num(key, v)?,
            "fragment_len" => p.fragment_len = num(key, v)?,
            "workers" => p.workers = num(key, v)?,
            "entropy_coef" => p.entropy_coef = num(key, v)?,
            "vf_coef" => p.vf_coef = num(key, v)?,
            "normalize_advantages" => p.normalize_advantages = num(key, v)?,
            "seeds" => self.seeds = list(key, v)?,
            "smoothing_window" => self.smoothing_window = num(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "eval_seed_base" => self.eval_seed_base = num(key, v)?,
            "ablate_seeds" => self.ablate_seeds = list(key, v)?,
            other => return Err(Error::config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.ppo;
        Some(match key {
            "route" => self.world.route.to_string(),
            "frame_size" => self.world.frame_size.to_string(),
            "max_steps" => self.world.max_steps.to_string(),
            "lane_penalty" => self.world.lane_penalty.to_string(),
            "collision_penalty" => self.world.collision_penalty.to_string(),
            "lane_charge" => self.world.lane_charge.to_string(),
            "corpus_videos" => self.corpus_videos.to_string(),
            "corpus_frames" => self.corpus_frames.to_string(),
            "corpus_routes" => join(&self.corpus_routes),
            "encoder" => match self.encoder {
                EncoderSize::Tiny => "tiny".into(),
                EncoderSize::Full => "full".into(),
            },
            "scheme" => self.scheme.to_string(),
            "pretrain_steps" => self.pretrain_steps.to_string(),
            "pretrain_lr" => self.pretrain_lr.to_string(),
            "pretrain_batch" => self.pretrain_batch.to_string(),
            "moco_queue" => self.moco_queue.to_string(),
            "temperature" => self.temperature.to_string(),
            "target_momentum" => self.target_momentum.to_string(),
            "episodes" => self.episodes.to_string(),
            "head_variant" => self.head_variant.to_string(),
            "head_scale" => match self.head_scale {
                HeadScale::Desk => "desk".into(),
                HeadScale::Full => "full".into(),
            },
            "lr" => p.lr.to_string(),
            "gamma" => p.gamma.to_string(),
            "lambda" => p.lambda.to_string(),
            "clip" => p.clip.to_string(),
            "vf_clip" => p.vf_clip.to_string(),
            "kl_coef" => p.kl_coef.to_string(),
            "kl_target" => p.kl_target.to_string(),
            "sgd_iters" => p.sgd_iters.to_string(),
            "minibatch" => p.minibatch.to_string(),
            "batch_size" => p.batch_size.to_string(),
            "fragment_len" => p.fragment_len.to_string(),
            "workers" => p.workers.to_string(),
            "entropy_coef" => p.entropy_coef.to_string(),
            "vf_coef" => p.vf_coef.to_string(),
            "normalize_advantages" => p.normalize_advantages.to_string(),
            "seeds" => join(&self.seeds),
            "smoothing_window" => self.smoothing_window.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "eval_seed_base" => self.eval_seed_base.to_string(),
            "ablate_seeds" => join(&self.ablate_seeds),
            _ => return None,
        })
    }

    /// Every key with its current value, commented with its description.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, doc) in KEYS {
            s.push_str(&format!("# {doc}\n{k} = {}\n", self.get(k).expect("listed key")));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.ppo.validate()?;
        self.encoder_config().validate()?;
        if self.seeds.is_empty() || self.ablate_seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.episodes == 0 || self.smoothing_window == 0 {
            return Err(Error::config("episodes and smoothing_window must be positive"));
        }
        if self.corpus_routes.is_empty() {
            return Err(Error::config("corpus_routes must name at least one route"));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let s = self.world.frame_size;
        let base = match self.encoder {
            EncoderSize::Tiny => EncoderConfig::tiny(s),
            EncoderSize::Full => EncoderConfig {
                height: s,
                width: s,
                ..EncoderConfig::default()
            },
        };
        EncoderConfig {
            momentum: self.target_momentum,
            ..base
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            scheme: self.scheme,
            encoder: self.encoder_config(),
            batch_size: self.pretrain_batch,
            steps: self.pretrain_steps,
            lr: self.pretrain_lr,
            queue_size: self.moco_queue,
            temperature: self.temperature,
            seed,
            ..PretrainConfig::default()
        }
    }

    pub fn head_config(&self, variant: HeadVariant) -> HeadConfig {
        match self.head_scale {
            HeadScale::Desk => HeadConfig::desk(variant.size),
            HeadScale::Full => HeadConfig::full(variant.size),
        }
    }

    pub fn train_config(&self, variant: HeadVariant, seed: u64, end_to_end: bool, serial: bool) -> TrainConfig {
        TrainConfig {
            ppo: self.ppo.clone(),
            world: self.world.clone(),
            variant,
            head: self.head_config(variant),
            actions: 1,
            episodes: self.episodes,
            seed,
            end_to_end,
            serial,
        }
    }
}
