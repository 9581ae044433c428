use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::VideoClip;
use crate::error::{Error, Result};

use super::config::{LaneCharge, WorldConfig};
use super::render::render_frame;
use super::route::Route;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    /// A lane-invasion penalty was charged on this step.
    pub lane_invaded: bool,
    pub collided: bool,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: VideoClip,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeStats {
    pub total_reward: f64,
    pub steps: usize,
    pub lane_invasions: usize,
    pub collisions: usize,
}

/// `-c_l [lane_invaded] - c_c [collided]`
pub fn compute_reward(lane_invaded: bool, collided: bool, config: &WorldConfig) -> f64 {
    let mut r = 0.0;
    if lane_invaded {
        r -= config.lane_penalty;
    }
    if collided {
        r -= config.collision_penalty;
    }
    r
}

#[derive(Debug, Clone)]
pub struct WorldState {
    config: Arc<WorldConfig>,
    route: Arc<Route>,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    obstacles: Vec<Obstacle>,
    step: usize,
    done: bool,
    outside_lane: bool,
    lateral: f64,
    route_heading: f64,
    stats: EpisodeStats,
    rng: ChaCha8Rng,
    frames: VecDeque<Vec<u8>>,
}

impl WorldState {
    /// Spawns the ego on the centerline at a seeded arc length, heading along
    /// the road, and returns the initial frame replicated `stack_length` times.
    pub fn reset(seed: u64, config: &WorldConfig) -> Result<(WorldState, VideoClip)> {
        config.validate()?;
        let layout = config.route.layout()?;
        if layout.lane_half_width_m <= config.vehicle_width / 2.0 {
            return Err(Error::config(
                "lane half-width must exceed the vehicle half-width",
            ));
        }
        let min_len = layout.spawn_range_m + config.travel_m() + config.view_m * 1.5 + 20.0;
        let route = Route::build(layout, min_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spawn_s = if route.layout.spawn_range_m > 0.0 {
            rng.gen_range(0.0..route.layout.spawn_range_m)
        } else {
            0.0
        };
        let (x, y, heading) = route.pose_at(spawn_s);
        let obstacles = route
            .layout
            .obstacles
            .iter()
            .map(|o| {
                let (ox, oy, oh) = route.pose_at(o.s_m);
                Obstacle {
                    x: ox - o.lateral_m * oh.sin(),
                    y: oy + o.lateral_m * oh.cos(),
                    radius: o.radius_m,
                    vx: o.speed_m_s * oh.cos(),
                    vy: o.speed_m_s * oh.sin(),
                }
            })
            .collect();
        let mut state = WorldState {
            config: Arc::new(config.clone()),
            route: Arc::new(route),
            x,
            y,
            heading,
            speed: config.speed,
            obstacles,
            step: 0,
            done: false,
            outside_lane: false,
            lateral: 0.0,
            route_heading: heading,
            stats: EpisodeStats::default(),
            rng,
            frames: VecDeque::with_capacity(config.stack_length),
        };
        let p = state.route.project(x, y);
        state.lateral = p.lateral;
        state.route_heading = p.heading;
        let frame = state.render_observation();
        for _ in 0..config.stack_length {
            state.frames.push_back(frame.clone());
        }
        let obs = state.observation();
        Ok((state, obs))
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn stats(&self) -> EpisodeStats {
        self.stats
    }

    /// Signed lateral offset from the centerline (left positive), metres.
    pub fn lateral_offset(&self) -> f64 {
        self.lateral
    }

    /// Ego heading minus road heading, wrapped to `(-pi, pi]`.
    pub fn heading_error(&self) -> f64 {
        let d = self.heading - self.route_heading;
        d.sin().atan2(d.cos())
    }

    /// Seeded generator owned by this episode.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn observation(&self) -> VideoClip {
        let n = self.config.frame_size;
        let frames: Vec<Vec<u8>> = self.frames.iter().cloned().collect();
        VideoClip::from_frames(&frames, n, n).expect("frames rendered at configured size")
    }

    /// Rasterises the current scene (`3 x H x W`).
    pub fn render_observation(&self) -> Vec<u8> {
        render_frame(self)
    }

    fn collides(&self) -> bool {
        let c = &self.config;
        let barrier = self.route.layout.barrier_offset_m;
        if barrier > 0.0 && self.lateral.abs() + c.vehicle_width / 2.0 >= barrier {
            return true;
        }
        let (hl, hw) = (c.vehicle_length / 2.0, c.vehicle_width / 2.0);
        let (cos, sin) = (self.heading.cos(), self.heading.sin());
        self.obstacles.iter().any(|o| {
            let (dx, dy) = (o.x - self.x, o.y - self.y);
            let fwd = dx * cos + dy * sin;
            let left = -dx * sin + dy * cos;
            let cf = fwd.clamp(-hl, hl);
            let cl = left.clamp(-hw, hw);
            (fwd - cf).powi(2) + (left - cl).powi(2) <= o.radius * o.radius
        })
    }

    /// Advances one kinematic step with the given steering command.
    pub fn step(&mut self, steering: f64) -> Result<StepResult> {
        if self.done {
            return Err(Error::Protocol("step called on a finished episode".into()));
        }
        if !steering.is_finite() {
            return Err(Error::NonFinite(format!("steering command {steering}")));
        }
        let c = self.config.clone();
        let steer = steering.clamp(-1.0, 1.0);
        let wheel = steer * c.max_steer_deg.to_radians();
        self.x += self.speed * self.heading.cos() * c.dt;
        self.y += self.speed * self.heading.sin() * c.dt;
        self.heading += self.speed / c.wheelbase * wheel.tan() * c.dt;
        for o in &mut self.obstacles {
            o.x += o.vx * c.dt;
            o.y += o.vy * c.dt;
        }
        self.step += 1;

        let p = self.route.project(self.x, self.y);
        self.lateral = p.lateral;
        self.route_heading = p.heading;
        let outside = self.lateral.abs() > self.route.layout.lane_half_width_m;
        let lane_invaded = match c.lane_charge {
            LaneCharge::PerStep => outside,
            LaneCharge::PerEntry => outside && !self.outside_lane,
        };
        self.outside_lane = outside;
        let collided = self.collides();
        let reward = compute_reward(lane_invaded, collided, &c);
        self.done = collided || self.step >= c.max_steps;

        self.stats.total_reward += reward;
        self.stats.steps = self.step;
        self.stats.lane_invasions += lane_invaded as usize;
        self.stats.collisions += collided as usize;

        let frame = self.render_observation();
        self.frames.pop_front();
        self.frames.push_back(frame);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                lane_invaded,
                collided,
                step: self.step,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::route::RouteId;

    #[test]
    fn reward_table() {
        let c = WorldConfig::default();
        assert_eq!(compute_reward(false, false, &c), 0.0);
        assert_eq!(compute_reward(true, false, &c), -2.0);
        assert_eq!(compute_reward(false, true, &c), -30.0);
        assert_eq!(compute_reward(true, true, &c), -32.0);
    }

    #[test]
    fn reset_is_deterministic_and_initialised() {
        let c = WorldConfig::default();
        let (s1, o1) = WorldState::reset(7, &c).unwrap();
        let (s2, o2) = WorldState::reset(7, &c).unwrap();
        assert_eq!(o1, o2);
        assert_eq!((s1.x, s1.y, s1.heading), (s2.x, s2.y, s2.heading));
        assert_eq!(s1.step_count(), 0);
        assert_eq!(s1.stats().total_reward, 0.0);
        for t in 1..o1.frames() {
            assert_eq!(o1.frame(t), o1.frame(0));
        }
    }

    #[test]
    fn stepping_a_finished_episode_is_a_protocol_error() {
        let c = WorldConfig {
            max_steps: 2,
            frame_size: 16,
            ..WorldConfig::default()
        };
        let (mut s, _) = WorldState::reset(1, &c).unwrap();
        s.step(0.0).unwrap();
        assert!(s.step(0.0).unwrap().done);
        assert!(matches!(s.step(0.0), Err(Error::Protocol(_))));
    }

    #[test]
    fn obstacle_collision_ends_episode() {
        let layout = "lane_half_width_m = 1.75\nspawn_range_m = 0\nobstacle = 10, 0, 0.5\n";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wall.route");
        std::fs::write(&path, layout).unwrap();
        let c = WorldConfig {
            route: RouteId::File(path),
            frame_size: 16,
            ..WorldConfig::default()
        };
        let (mut s, _) = WorldState::reset(0, &c).unwrap();
        let mut last = None;
        while !s.is_done() {
            last = Some(s.step(0.0).unwrap());
        }
        let last = last.unwrap();
        assert!(last.info.collided);
        assert_eq!(last.reward, -30.0);
        assert!(s.step_count() < c.max_steps);
    }

    #[test]
    fn per_entry_mode_charges_once_per_excursion() {
        let c = WorldConfig {
            frame_size: 16,
            lane_charge: LaneCharge::PerEntry,
            route: RouteId::File({
                let dir = tempfile::tempdir().unwrap().keep();
                let p = dir.join("open.route");
                std::fs::write(&p, "spawn_range_m = 0\n").unwrap();
                p
            }),
            ..WorldConfig::default()
        };
        let (mut s, _) = WorldState::reset(0, &c).unwrap();
        for _ in 0..40 {
            s.step(0.3).unwrap();
        }
        assert!(s.lateral_offset() > 1.75);
        assert_eq!(s.stats().lane_invasions, 1);
        assert_eq!(s.stats().total_reward, -2.0);
    }
}
