use std::path::Path;

use crate::clip::VideoClip;
use crate::error::{Error, Result};

use super::config::WorldConfig;
use super::world::{EpisodeStats, WorldState};

/// One row of an exported episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub steering: f64,
    pub reward: f64,
    pub lane_invaded: bool,
    pub collided: bool,
}

/// Runs `reset` and the step loop to completion under `policy`.
pub fn rollout_episode<F>(policy: F, seed: u64, config: &WorldConfig) -> Result<EpisodeStats>
where
    F: FnMut(&VideoClip) -> Result<f64>,
{
    rollout_traced(policy, seed, config).map(|(stats, _)| stats)
}

/// Like [`rollout_episode`] but also records a per-step trace.
pub fn rollout_traced<F>(
    mut policy: F,
    seed: u64,
    config: &WorldConfig,
) -> Result<(EpisodeStats, Vec<TraceRow>)>
where
    F: FnMut(&VideoClip) -> Result<f64>,
{
    let (mut state, mut obs) = WorldState::reset(seed, config)?;
    let mut trace = Vec::with_capacity(config.max_steps);
    loop {
        let steering = policy(&obs)?;
        let r = state.step(steering)?;
        trace.push(TraceRow {
            step: r.info.step,
            x: state.x,
            y: state.y,
            heading: state.heading,
            steering,
            reward: r.reward,
            lane_invaded: r.info.lane_invaded,
            collided: r.info.collided,
        });
        obs = r.observation;
        if r.done {
            break;
        }
    }
    Ok((state.stats(), trace))
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Dataset(format!("{other:?}")),
    })?;
    w.write_record([
        "step",
        "x",
        "y",
        "heading",
        "steering",
        "reward",
        "lane_invaded",
        "collided",
    ])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.heading.to_string(),
            r.steering.to_string(),
            r.reward.to_string(),
            (r.lane_invaded as u8).to_string(),
            (r.collided as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
