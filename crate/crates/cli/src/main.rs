use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use decoupled_core::experiments::{self, ExperimentConfig};
use decoupled_core::heads::{HeadKind, HeadSize, HeadVariant, PolicyCheckpoint};
use decoupled_core::pretrain::Scheme;

/// Self-supervised video encoders for driving agents: corpus generation,
/// pretraining, PPO with frozen or end-to-end encoders, ablations.
#[derive(Parser, Debug)]
#[command(name = "decoupled", version)]
struct Cli {
    /// Flat `key = value` file overriding the defaults (see `print-config`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SeedArgs {
    /// Single seed; overrides `--seeds` and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl SeedArgs {
    fn resolve(&self, default: &[u64]) -> Vec<u64> {
        match (&self.seed, &self.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(v)) => v.clone(),
            (None, None) => default.to_vec(),
        }
    }
}

#[derive(Args, Debug)]
struct HeadArgs {
    /// Pro1D | avg1D | avg2D
    #[arg(long)]
    head_variant: Option<HeadKind>,
    /// s | xl
    #[arg(long)]
    head_size: Option<HeadSize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scripted-driver video corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain an encoder on a corpus and export it frozen.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// moco | byol | dpc | vae
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train PPO agents, one per seed, and aggregate their rewards.
    TrainAgent {
        #[arg(long)]
        out: PathBuf,
        /// Encoder checkpoint; optional with --end-to-end.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Train the encoder with the RL loss as well.
        #[arg(long)]
        end_to_end: bool,
        #[command(flatten)]
        head: HeadArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        /// Step the rollout workers one after another.
        #[arg(long)]
        serial: bool,
    },
    /// Train every encoder × head cell and write the normalized grid.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// Encoder checkpoints, `label=path` or a path labelled by its stem.
        #[arg(required = true)]
        encoders: Vec<String>,
        /// Restrict the grid to one head kind and/or size.
        #[command(flatten)]
        head: HeadArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long)]
        serial: bool,
    },
    /// Deterministic evaluation of a policy checkpoint.
    Evaluate {
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First evaluation episode seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print every configuration key with its default.
    PrintConfig,
}

fn variant(cfg: &ExperimentConfig, head: &HeadArgs) -> HeadVariant {
    HeadVariant::new(
        head.head_variant.unwrap_or(cfg.head_variant.kind),
        head.head_size.unwrap_or(cfg.head_variant.size),
    )
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::GenCorpus { out, seed } => {
            let s = experiments::gen_corpus(&cfg, seed, &out)?;
            println!(
                "corpus {}: {} videos, {} frames, digest {:08x}",
                out.display(),
                s.videos,
                s.frames,
                s.digest
            );
        }
        Command::Pretrain {
            corpus,
            out,
            scheme,
            seed,
        } => {
            if let Some(s) = scheme {
                cfg.scheme = s;
            }
            let s = experiments::pretrain(&cfg, seed, &corpus, &out)?;
            let last = s.metrics.last().context("no pretraining steps")?;
            println!(
                "{} pretrained for {} steps, final loss {:.5}, embedding std {:.4}{}",
                cfg.scheme,
                s.metrics.len(),
                last.loss,
                last.embedding_std,
                if s.collapsed() { " (collapse detected)" } else { "" }
            );
            println!("checkpoint {}", s.checkpoint.display());
            println!("metrics {}", s.metrics_csv.display());
        }
        Command::TrainAgent {
            out,
            encoder,
            end_to_end,
            head,
            seeds,
            serial,
        } => {
            let v = variant(&cfg, &head);
            let seeds = seeds.resolve(&cfg.seeds);
            let enc = match &encoder {
                Some(p) => Some(experiments::load_encoder(p).with_context(|| format!("loading {}", p.display()))?),
                None if end_to_end => None,
                None => bail!("--encoder is required unless --end-to-end is given"),
            };
            let s = experiments::train_agent(&cfg, enc.as_ref(), v, &seeds, end_to_end, serial, &out)?;
            for r in &s.runs {
                println!(
                    "seed {}: {} episodes, final-{} mean reward {:.3}",
                    r.seed,
                    r.episodes.len(),
                    cfg.smoothing_window,
                    r.final_mean(cfg.smoothing_window)
                );
            }
            println!("aggregate {}", s.aggregate_csv.display());
        }
        Command::Ablate {
            out,
            encoders,
            head,
            seeds,
            serial,
        } => {
            cfg.ablate_seeds = seeds.resolve(&cfg.ablate_seeds);
            let variants: Vec<HeadVariant> = HeadVariant::all()
                .into_iter()
                .filter(|v| head.head_variant.map_or(true, |k| k == v.kind))
                .filter(|v| head.head_size.map_or(true, |s| s == v.size))
                .collect();
            let encs: Vec<_> = encoders.iter().map(|e| experiments::parse_encoder_arg(e)).collect();
            let g = experiments::ablate(&cfg, &encs, &variants, serial, &out)?;
            for c in &g.cells {
                match (c.best, c.normalized) {
                    (Some(b), Some(n)) => println!("{:<12} {:<9} best {:>10.3} normalized {:.3}", c.encoder, c.variant, b, n),
                    _ => println!("{:<12} {:<9} missing", c.encoder, c.variant),
                }
            }
            println!("trained {} cells; grid {}", g.trained, g.csv.display());
        }
        Command::Evaluate { policy, out, seed } => {
            if let Some(s) = seed {
                cfg.eval_seed_base = s;
            }
            let ck = PolicyCheckpoint::load(&policy).with_context(|| format!("loading {}", policy.display()))?;
            let s = experiments::evaluate_policy(&cfg, &ck, &out)?;
            for (name, st) in [("mean", s.mean), ("median", s.median)] {
                println!(
                    "{name:<6} reward {:.3} steps {:.1} lane invasions {:.2} collisions {:.2}",
                    st.reward, st.steps, st.lane_invasions, st.collisions
                );
            }
            println!("{} episodes written to {}", s.rows.len(), out.join("evaluation.csv").display());
        }
        Command::PrintConfig => print!("{}", cfg.to_text()),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
