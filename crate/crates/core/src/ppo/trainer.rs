use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clip::FloatClip;
use crate::encoder::{clips_to_tensor, Encoder, EncoderCheckpoint, EncoderConfig, SchemeTag};
use crate::error::{Error, Result};
use crate::heads::{adapt_on_tape, HeadConfig, HeadVariant};
use crate::nn::tape::{sigmoid, softplus};
use crate::nn::{Adam, Tape, Tensor};
use crate::sim::{EpisodeStats, WorldConfig};

use super::losses::{
    adaptive_kl_update, gaussian_entropy, gaussian_kl, gaussian_kl_grads, gaussian_logp,
    gaussian_logp_grads, normalize, ppo_surrogate, value_loss,
};
use super::policy::Policy;
use super::rollout::{collect_rollouts, spawn_workers, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub vf_clip: f64,
    pub kl_coef: f64,
    pub kl_target: f64,
    pub sgd_iters: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub normalize_advantages: bool,
    pub batch_size: usize,
    pub fragment_len: usize,
    pub workers: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lambda: 0.95,
            clip: 0.1,
            vf_clip: 10.0,
            kl_coef: 0.3,
            kl_target: 0.03,
            sgd_iters: 3,
            minibatch: 128,
            lr: 2e-5,
            entropy_coef: 0.0,
            vf_coef: 1.0,
            normalize_advantages: true,
            batch_size: 640,
            fragment_len: 64,
            workers: 4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return fail("gamma and lambda must lie in (0, 1]");
        }
        if !(self.clip > 0.0) || !(self.vf_clip > 0.0) {
            return fail("clip and vf_clip must be positive");
        }
        if self.kl_coef < 0.0 || self.kl_target < 0.0 || self.entropy_coef < 0.0 || self.vf_coef < 0.0 {
            return fail("loss coefficients must be non-negative");
        }
        if !(self.lr >= 0.0) {
            return fail("learning rate must be non-negative");
        }
        if self.sgd_iters == 0 || self.minibatch == 0 || self.batch_size == 0 {
            return fail("sgd_iters, minibatch and batch_size must be positive");
        }
        if self.fragment_len == 0 || self.workers == 0 {
            return fail("fragment_len and workers must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub world: WorldConfig,
    pub variant: HeadVariant,
    pub head: HeadConfig,
    pub actions: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Train the encoder together with the heads.
    pub end_to_end: bool,
    pub serial: bool,
}

impl TrainConfig {
    pub fn new(world: WorldConfig, variant: HeadVariant) -> Self {
        Self {
            ppo: PpoConfig::default(),
            world,
            variant,
            head: HeadConfig::desk(variant.size),
            actions: 1,
            episodes: 300,
            seed: 0,
            end_to_end: false,
            serial: false,
        }
    }
}

/// Loss terms of one evaluation of the PPO objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub kl: f64,
    pub entropy: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub encoder: Option<Vec<f64>>,
}

/// A transition with its advantage and return target.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub t: &'a Transition,
    pub advantage: f64,
    pub ret: f64,
}

fn observations(samples: &[Sample]) -> Result<Vec<FloatClip>> {
    samples
        .iter()
        .map(|s| {
            s.t.obs
                .as_ref()
                .map(|o| o.to_float())
                .ok_or_else(|| Error::Protocol("end-to-end updates need stored observations".into()))
        })
        .collect()
}

/// Loss and gradients of
/// `-surrogate + vf_coef * value_loss + kl_coef * KL(old || new) - entropy_coef * entropy`
/// plus the L1/L2 head penalty, for one minibatch. With `end_to_end` the
/// encoder is re-run on the stored observations and receives gradients too.
pub fn minibatch_grads(
    policy: &Policy,
    samples: &[Sample],
    ppo: &PpoConfig,
    kl_coef: f64,
    end_to_end: bool,
) -> Result<(LossParts, Grads)> {
    let n = samples.len();
    let k = policy.actions;
    let mut tape = Tape::new();
    let h = if end_to_end {
        let x = tape.constant(clips_to_tensor(&observations(samples)?));
        let f = policy.encoder.features(&mut tape, &policy.enc_params, Some(2), x);
        adapt_on_tape(policy.variant.kind, &mut tape, &policy.encoder, &policy.enc_params, Some(2), f)
    } else {
        let mut data = Vec::with_capacity(n * policy.input_len());
        for s in samples {
            data.extend_from_slice(&s.t.input);
        }
        tape.constant(Tensor::new(vec![n, policy.input_len()], data))
    };
    let raw = policy.actor_net.forward(&mut tape, &policy.actor, Some(0), h);
    let val = policy.critic_net.forward(&mut tape, &policy.critic, Some(1), h);
    let raw_v = tape.value(raw).data.clone();
    let values = tape.value(val).data.clone();

    let mut means = vec![0.0; n * k];
    let mut vars = vec![0.0; n * k];
    let mut logp = vec![0.0; n];
    for i in 0..n {
        for j in 0..k {
            means[i * k + j] = raw_v[i * 2 * k + 2 * j];
            vars[i * k + j] = softplus(raw_v[i * 2 * k + 2 * j + 1]).max(f64::MIN_POSITIVE);
        }
        logp[i] = gaussian_logp(&samples[i].t.action, &means[i * k..(i + 1) * k], &vars[i * k..(i + 1) * k])?;
    }
    let logp_old: Vec<f64> = samples.iter().map(|s| s.t.logp).collect();
    let adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
    let surr = ppo_surrogate(&logp, &logp_old, &adv, ppo.clip)?;
    let v_old: Vec<f64> = samples.iter().map(|s| s.t.value).collect();
    let rets: Vec<f64> = samples.iter().map(|s| s.ret).collect();
    let (vl, dv) = value_loss(&values, &v_old, &rets, ppo.vf_clip)?;

    let mut kl = 0.0;
    let mut entropy = 0.0;
    let mut d_raw = vec![0.0; n * 2 * k];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let t = samples[i].t;
        let (m, v) = (&means[i * k..(i + 1) * k], &vars[i * k..(i + 1) * k]);
        kl += gaussian_kl(&t.mean, &t.variance, m, v);
        entropy += gaussian_entropy(v);
        for j in 0..k {
            let (lm, lv) = gaussian_logp_grads(t.action[j], m[j], v[j]);
            let (km, kv) = gaussian_kl_grads(t.mean[j], t.variance[j], m[j], v[j]);
            let dm = surr.d_logp[i] * lm + kl_coef * inv_n * km;
            let dvar = surr.d_logp[i] * lv + kl_coef * inv_n * kv - ppo.entropy_coef * inv_n * 0.5 / v[j];
            d_raw[i * 2 * k + 2 * j] = dm;
            d_raw[i * 2 * k + 2 * j + 1] = dvar * sigmoid(raw_v[i * 2 * k + 2 * j + 1]);
        }
    }
    kl *= inv_n;
    entropy *= inv_n;
    let dv: Vec<f64> = dv.iter().map(|g| g * ppo.vf_coef).collect();
    tape.backward(&[(raw, &d_raw), (val, &dv)]);
    let mut ga = vec![0.0; policy.actor.len()];
    let mut gc = vec![0.0; policy.critic.len()];
    tape.param_grads(0, &mut ga);
    tape.param_grads(1, &mut gc);
    let ge = end_to_end.then(|| {
        let mut g = vec![0.0; policy.enc_params.len()];
        tape.param_grads(2, &mut g);
        g
    });
    let (l1, l2) = (policy.head.l1, policy.head.l2);
    let penalty = policy.actor.weight_penalty(l1, l2, &mut ga) + policy.critic.weight_penalty(l1, l2, &mut gc);
    let total = surr.loss + ppo.vf_coef * vl + kl_coef * kl - ppo.entropy_coef * entropy + penalty;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("ppo loss {total}")));
    }
    Ok((
        LossParts {
            total,
            policy: surr.loss,
            value: vl,
            kl,
            entropy,
            penalty,
        },
        Grads {
            actor: ga,
            critic: gc,
            encoder: ge,
        },
    ))
}

/// Mean `KL(old || current)` over the samples.
pub fn mean_kl(policy: &Policy, samples: &[Sample], end_to_end: bool) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(128) {
        let inputs = if end_to_end {
            policy.head_inputs(&observations(chunk)?)?
        } else {
            Tensor::from_rows(&chunk.iter().map(|s| s.t.input.clone()).collect::<Vec<_>>())
        };
        let (outs, _) = policy.heads(&inputs)?;
        for (s, o) in chunk.iter().zip(outs) {
            total += gaussian_kl(&s.t.mean, &s.t.variance, &o.mean, &o.variance);
        }
    }
    Ok(total / samples.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Episodes finished so far (the index of the last one, 1-based).
    pub episode: usize,
    pub new_episodes: usize,
    pub mean_reward: Option<f64>,
    pub mean_steps: Option<f64>,
    pub mean_lane_invasions: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub kl_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub worker: usize,
    pub seed: u64,
    pub stats: EpisodeStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub iterations: Vec<IterationLog>,
    pub episodes: Vec<EpisodeRecord>,
}

/// An untrained encoder wrapped as a checkpoint, the starting point of
/// end-to-end runs without a pretrained encoder.
pub fn random_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderCheckpoint> {
    let enc = Encoder::new(config.clone())?;
    let [c, t, h, w] = enc.feature_shape();
    Ok(EncoderCheckpoint {
        config: config.clone(),
        scheme: SchemeTag::External,
        contract: crate::encoder::ShapeContract {
            feature_map: [c, t, h, w],
            projection_dim: config.projection_dim,
        },
        params: enc.init(seed),
    })
}

fn mean_of(episodes: &[EpisodeRecord], f: impl Fn(&EpisodeStats) -> f64) -> Option<f64> {
    (!episodes.is_empty()).then(|| episodes.iter().map(|e| f(&e.stats)).sum::<f64>() / episodes.len() as f64)
}

/// Synchronous PPO until `config.episodes` episodes have finished.
///
/// Frozen runs never register the encoder with an optimizer; end-to-end runs
/// start from a thawed copy of `encoder`.
pub fn train(config: &TrainConfig, encoder: &EncoderCheckpoint) -> Result<TrainOutcome> {
    config.ppo.validate()?;
    config.world.validate()?;
    if config.episodes == 0 {
        return Err(Error::config("episode budget must be positive"));
    }
    let ppo = &config.ppo;
    let mut policy = Policy::new(encoder, config.variant, config.head.clone(), config.actions, config.seed)?;
    let mut enc_opt = None;
    if config.end_to_end {
        policy.enc_params = policy.enc_params.thawed();
        enc_opt = Some(Adam::new(&policy.enc_params, ppo.lr)?);
    }
    let mut actor_opt = Adam::new(&policy.actor, ppo.lr)?;
    let mut critic_opt = Adam::new(&policy.critic, ppo.lr)?;
    let mut workers = spawn_workers(ppo.workers, config.seed, &config.world, config.end_to_end)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);
    let mut kl_coef = ppo.kl_coef;
    let mut iterations = Vec::new();
    let mut episodes: Vec<EpisodeRecord> = Vec::new();

    while episodes.len() < config.episodes {
        let batch = collect_rollouts(
            &mut workers,
            &policy,
            ppo.batch_size,
            ppo.fragment_len,
            ppo.gamma,
            ppo.lambda,
            config.serial,
        )?;
        let first_new = episodes.len();
        for e in &batch.episodes {
            if episodes.len() == config.episodes {
                break;
            }
            episodes.push(EpisodeRecord {
                episode: episodes.len() + 1,
                worker: e.worker,
                seed: e.seed,
                stats: e.stats,
            });
        }
        let mut adv = batch.advantages.clone();
        if ppo.normalize_advantages {
            normalize(&mut adv);
        }
        let samples: Vec<Sample> = batch
            .transitions()
            .zip(&adv)
            .zip(&batch.returns)
            .map(|((t, &a), &r)| Sample {
                t,
                advantage: a,
                ret: r,
            })
            .collect();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let (mut pl, mut vl, mut count) = (0.0, 0.0, 0usize);
        let (mut kl, mut kl_n) = (0.0, 0usize);
        for pass in 0..ppo.sgd_iters {
            order.shuffle(&mut shuffle);
            for chunk in order.chunks(ppo.minibatch) {
                let mb: Vec<Sample> = chunk.iter().map(|&i| samples[i]).collect();
                let (parts, g) = minibatch_grads(&policy, &mb, ppo, kl_coef, config.end_to_end)?;
                actor_opt.step(&mut policy.actor, &g.actor)?;
                critic_opt.step(&mut policy.critic, &g.critic)?;
                if let (Some(opt), Some(ge)) = (enc_opt.as_mut(), g.encoder.as_ref()) {
                    opt.step(&mut policy.enc_params, ge)?;
                }
                pl += parts.policy;
                vl += parts.value;
                count += 1;
                // KL as seen by the minibatches of the final pass
                if pass + 1 == ppo.sgd_iters {
                    kl += parts.kl * mb.len() as f64;
                    kl_n += mb.len();
                }
            }
        }
        let kl = kl / kl_n.max(1) as f64;
        if !kl.is_finite() {
            return Err(Error::NonFinite(format!("measured kl {kl}")));
        }
        let new = &episodes[first_new..];
        let log = IterationLog {
            iteration: iterations.len() + 1,
            episode: episodes.len(),
            new_episodes: new.len(),
            mean_reward: mean_of(new, |s| s.total_reward),
            mean_steps: mean_of(new, |s| s.steps as f64),
            mean_lane_invasions: mean_of(new, |s| s.lane_invasions as f64),
            policy_loss: pl / count as f64,
            value_loss: vl / count as f64,
            kl,
            kl_coef,
        };
        log::info!(
            "iteration {} episodes {} reward {:?} kl {:.4} kl_coef {:.3}",
            log.iteration,
            log.episode,
            log.mean_reward,
            kl,
            kl_coef
        );
        iterations.push(log);
        kl_coef = adaptive_kl_update(kl, kl_coef, ppo.kl_target);
    }
    Ok(TrainOutcome {
        policy,
        iterations,
        episodes,
    })
}

/// Deterministic evaluation: the mean action, no sampling.
pub fn evaluate(policy: &Policy, world: &WorldConfig, seeds: &[u64]) -> Result<Vec<EpisodeStats>> {
    seeds
        .iter()
        .map(|&s| crate::sim::rollout_episode(|obs| Ok(policy.mean_action(obs)?[0]), s, world))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_iterations_csv(path: &Path, rows: &[IterationLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "episode",
        "new_episodes",
        "mean_reward",
        "mean_steps",
        "mean_lane_invasions",
        "policy_loss",
        "value_loss",
        "kl",
        "kl_coef",
    ])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.episode.to_string(),
            r.new_episodes.to_string(),
            opt(r.mean_reward),
            opt(r.mean_steps),
            opt(r.mean_lane_invasions),
            r.policy_loss.to_string(),
            r.value_loss.to_string(),
            r.kl.to_string(),
            r.kl_coef.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_episodes_csv(path: &Path, rows: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "worker", "seed", "reward", "steps", "lane_invasions", "collisions"])?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.worker.to_string(),
            r.seed.to_string(),
            r.stats.total_reward.to_string(),
            r.stats.steps.to_string(),
            r.stats.lane_invasions.to_string(),
            r.stats.collisions.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes_csv(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::Dataset(format!("{}: short row", path.display())))
        };
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .parse()
                .map_err(|_| Error::Dataset(format!("{}: bad number in column {i}", path.display())))
        };
        out.push(EpisodeRecord {
            episode: num(0)? as usize,
            worker: num(1)? as usize,
            seed: field(2)?
                .parse()
                .map_err(|_| Error::Dataset(format!("{}: bad seed", path.display())))?,
            stats: EpisodeStats {
                total_reward: num(3)?,
                steps: num(4)? as usize,
                lane_invasions: num(5)? as usize,
                collisions: num(6)? as usize,
            },
        });
    }
    Ok(out)
}
