use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::sim::{EpisodeStats, WorldConfig, WorldState};

use super::losses::{compute_gae, gaussian_logp};
use super::policy::Policy;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Kept only when the encoder is trained with the heads.
    pub obs: Option<VideoClip>,
    pub input: Vec<f64>,
    /// Sampled action before the simulator clips it.
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
    pub logp: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub worker: usize,
    pub transitions: Vec<Transition>,
    /// Critic value of the observation after the last step (0 if it ended an episode).
    pub bootstrap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinishedEpisode {
    pub worker: usize,
    pub seed: u64,
    pub stats: EpisodeStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub fragments: Vec<Fragment>,
    /// Episodes that ended during collection, in fragment order.
    pub episodes: Vec<FinishedEpisode>,
    /// Per transition, concatenated in fragment order.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.fragments.iter().map(|f| f.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.fragments.iter().flat_map(|f| f.transitions.iter())
    }
}

/// One simulator instance with its own episode-seed and sampling streams.
#[derive(Debug)]
pub struct Worker {
    pub id: usize,
    config: WorldConfig,
    state: WorldState,
    obs: VideoClip,
    episode_seed: u64,
    seeds: ChaCha8Rng,
    noise: ChaCha8Rng,
    keep_obs: bool,
}

impl Worker {
    pub fn new(id: usize, run_seed: u64, config: &WorldConfig, keep_obs: bool) -> Result<Self> {
        let mut seeds = ChaCha8Rng::seed_from_u64(run_seed);
        seeds.set_stream(2 * id as u64 + 1);
        let mut noise = ChaCha8Rng::seed_from_u64(run_seed);
        noise.set_stream(2 * id as u64 + 2);
        let episode_seed = seeds.gen();
        let (state, obs) = WorldState::reset(episode_seed, config)?;
        Ok(Self {
            id,
            config: config.clone(),
            state,
            obs,
            episode_seed,
            seeds,
            noise,
            keep_obs,
        })
    }

    /// Steps `len` times under a sampled Gaussian policy, resetting after
    /// every finished episode.
    pub fn run_fragment(&mut self, policy: &Policy, len: usize) -> Result<(Fragment, Vec<FinishedEpisode>)> {
        let mut transitions = Vec::with_capacity(len);
        let mut finished = Vec::new();
        for _ in 0..len {
            let step = policy.step(&self.obs)?;
            let action: Vec<f64> = step
                .output
                .mean
                .iter()
                .zip(&step.output.variance)
                .map(|(m, v)| m + v.sqrt() * self.noise.sample::<f64, _>(StandardNormal))
                .collect();
            let logp = gaussian_logp(&action, &step.output.mean, &step.output.variance)?;
            let r = self.state.step(action[0])?;
            transitions.push(Transition {
                obs: self.keep_obs.then(|| self.obs.clone()),
                input: step.input,
                action,
                reward: r.reward,
                done: r.done,
                value: step.value,
                logp,
                mean: step.output.mean,
                variance: step.output.variance,
            });
            if r.done {
                finished.push(FinishedEpisode {
                    worker: self.id,
                    seed: self.episode_seed,
                    stats: self.state.stats(),
                });
                self.episode_seed = self.seeds.gen();
                let (state, obs) = WorldState::reset(self.episode_seed, &self.config)?;
                self.state = state;
                self.obs = obs;
            } else {
                self.obs = r.observation;
            }
        }
        let last_done = transitions.last().map_or(true, |t| t.done);
        let bootstrap = if last_done { 0.0 } else { policy.step(&self.obs)?.value };
        Ok((
            Fragment {
                worker: self.id,
                transitions,
                bootstrap,
            },
            finished,
        ))
    }
}

pub fn spawn_workers(n: usize, run_seed: u64, config: &WorldConfig, keep_obs: bool) -> Result<Vec<Worker>> {
    (0..n).map(|i| Worker::new(i, run_seed, config, keep_obs)).collect()
}

type WorkerOutput = Vec<(usize, Fragment, Vec<FinishedEpisode>)>;

fn run_assigned(worker: &mut Worker, policy: &Policy, jobs: &[(usize, usize)]) -> Result<WorkerOutput> {
    let mut out = Vec::with_capacity(jobs.len());
    for &(j, len) in jobs {
        let (f, e) = worker.run_fragment(policy, len).map_err(|e| Error::Worker {
            worker: worker.id,
            reason: e.to_string(),
        })?;
        out.push((j, f, e));
    }
    Ok(out)
}

/// Collects exactly `batch_size` transitions as fragments of `fragment_len`
/// handed round-robin to the workers (the last one may be shorter), then
/// computes GAE per fragment.
///
/// Every worker owns its simulator and random streams, so the serial and
/// threaded modes produce the same batch.
pub fn collect_rollouts(
    workers: &mut [Worker],
    policy: &Policy,
    batch_size: usize,
    fragment_len: usize,
    gamma: f64,
    lambda: f64,
    serial: bool,
) -> Result<RolloutBatch> {
    if workers.is_empty() || batch_size == 0 || fragment_len == 0 {
        return Err(Error::config("rollouts need workers, a positive batch and fragment length"));
    }
    let count = batch_size.div_ceil(fragment_len);
    let mut jobs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); workers.len()];
    for j in 0..count {
        let len = fragment_len.min(batch_size - j * fragment_len);
        jobs[j % workers.len()].push((j, len));
    }
    let results: Vec<Result<WorkerOutput>> = if serial || workers.len() == 1 {
        workers
            .iter_mut()
            .zip(&jobs)
            .map(|(w, jb)| run_assigned(w, policy, jb))
            .collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = workers
                .iter_mut()
                .zip(&jobs)
                .map(|(w, jb)| {
                    let id = w.id;
                    (id, s.spawn(move || run_assigned(w, policy, jb)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(id, h)| {
                    h.join().unwrap_or_else(|_| {
                        Err(Error::Worker {
                            worker: id,
                            reason: "worker thread panicked".into(),
                        })
                    })
                })
                .collect()
        })
    };
    let mut slots: Vec<Option<(Fragment, Vec<FinishedEpisode>)>> = vec![None; count];
    for r in results {
        for (j, f, e) in r? {
            slots[j] = Some((f, e));
        }
    }
    let mut batch = RolloutBatch {
        fragments: Vec::with_capacity(count),
        episodes: Vec::new(),
        advantages: Vec::with_capacity(batch_size),
        returns: Vec::with_capacity(batch_size),
    };
    for slot in slots {
        let (f, e) = slot.expect("every fragment was assigned");
        let rewards: Vec<f64> = f.transitions.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = f.transitions.iter().map(|t| t.done).collect();
        let mut values: Vec<f64> = f.transitions.iter().map(|t| t.value).collect();
        values.push(f.bootstrap);
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda)?;
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
        batch.episodes.extend(e);
        batch.fragments.push(f);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{HeadConfig, HeadSize};
    use crate::ppo::policy::tests::tiny_encoder;
    use crate::sim::RouteId;

    fn setup() -> (Policy, WorldConfig) {
        let p = Policy::new(
            &tiny_encoder(),
            "avg1D_s".parse().unwrap(),
            HeadConfig::desk(HeadSize::S),
            1,
            1,
        )
        .unwrap();
        let w = WorldConfig {
            frame_size: 32,
            route: RouteId::SCurve,
            max_steps: 50,
            ..WorldConfig::default()
        };
        (p, w)
    }

    #[test]
    fn batch_has_exact_size_and_serial_matches_threaded() {
        let (p, w) = setup();
        let mut a = spawn_workers(4, 9, &w, false).unwrap();
        let ba = collect_rollouts(&mut a, &p, 100, 16, 0.9, 0.95, true).unwrap();
        assert_eq!(ba.len(), 100);
        assert_eq!(ba.fragments.len(), 7);
        assert_eq!(ba.fragments.last().unwrap().transitions.len(), 4);
        assert_eq!(ba.advantages.len(), 100);
        let workers: Vec<usize> = ba.fragments.iter().map(|f| f.worker).collect();
        assert_eq!(workers, vec![0, 1, 2, 3, 0, 1, 2]);
        let mut b = spawn_workers(4, 9, &w, false).unwrap();
        let bb = collect_rollouts(&mut b, &p, 100, 16, 0.9, 0.95, false).unwrap();
        assert_eq!(ba, bb);
        let mut c = spawn_workers(4, 10, &w, false).unwrap();
        assert_ne!(collect_rollouts(&mut c, &p, 100, 16, 0.9, 0.95, true).unwrap(), ba);
    }

    #[test]
    fn episodes_are_reported_and_observations_kept_on_request() {
        let (p, w) = setup();
        let mut ws = spawn_workers(2, 3, &w, true).unwrap();
        let b = collect_rollouts(&mut ws, &p, 240, 60, 0.9, 0.95, true).unwrap();
        let dones = b.transitions().filter(|t| t.done).count();
        assert_eq!(dones, b.episodes.len());
        assert!(dones >= 2);
        for t in b.transitions() {
            let o = t.obs.as_ref().unwrap();
            assert_eq!((o.frames(), o.height(), o.width()), (4, 32, 32));
            assert!(t.variance[0] > 0.0 && t.logp.is_finite());
        }
        for e in &b.episodes {
            assert!(e.stats.steps <= 50);
        }
    }

    #[test]
    fn worker_errors_carry_the_worker_id() {
        let (p, _) = setup();
        let w = WorldConfig {
            frame_size: 16,
            ..WorldConfig::default()
        };
        let mut ws = spawn_workers(3, 0, &w, false).unwrap();
        match collect_rollouts(&mut ws, &p, 30, 10, 0.9, 0.95, false) {
            Err(Error::Worker { worker, reason }) => {
                assert!(worker < 3);
                assert!(reason.contains("shape contract"));
            }
            other => panic!("expected a worker error, got {other:?}"),
        }
    }
}
