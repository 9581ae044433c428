use crate::error::{Error, Result};

use super::route::RouteId;

/// How lane-invasion penalties are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaneCharge {
    /// Every step spent outside the lane is penalised.
    #[default]
    PerStep,
    /// Only the step on which the ego leaves the lane is penalised.
    PerEntry,
}

impl std::str::FromStr for LaneCharge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-step" => Ok(LaneCharge::PerStep),
            "per-entry" => Ok(LaneCharge::PerEntry),
            other => Err(Error::config(format!("unknown lane charge mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for LaneCharge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LaneCharge::PerStep => "per-step",
            LaneCharge::PerEntry => "per-entry",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub route: RouteId,
    /// Square frame side in pixels.
    pub frame_size: usize,
    /// Frames per observation.
    pub stack_length: usize,
    pub max_steps: usize,
    pub lane_penalty: f64,
    pub collision_penalty: f64,
    pub lane_charge: LaneCharge,
    /// Seconds per step.
    pub dt: f64,
    /// Fixed autopilot speed, m/s.
    pub speed: f64,
    pub wheelbase: f64,
    /// Front-wheel angle at steering = 1, degrees.
    pub max_steer_deg: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    /// Metres covered by the frame width.
    pub view_m: f64,
    /// Vertical position of the ego in the frame, as a fraction of the height
    /// from the top.
    pub ego_row: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            route: RouteId::Straight,
            frame_size: 64,
            stack_length: 4,
            max_steps: 400,
            lane_penalty: 2.0,
            collision_penalty: 30.0,
            lane_charge: LaneCharge::PerStep,
            dt: 0.1,
            speed: 5.0,
            wheelbase: 2.5,
            max_steer_deg: 30.0,
            vehicle_length: 4.0,
            vehicle_width: 1.8,
            view_m: 24.0,
            ego_row: 0.7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if self.frame_size < 16 {
            return fail("frame_size must be at least 16");
        }
        if self.stack_length < 1 {
            return fail("stack_length must be at least 1");
        }
        if self.max_steps < 1 {
            return fail("max_steps must be at least 1");
        }
        if self.lane_penalty < 0.0 || self.collision_penalty < 0.0 {
            return fail("penalty coefficients must be non-negative");
        }
        if !(self.dt > 0.0 && self.speed >= 0.0 && self.wheelbase > 0.0) {
            return fail("dt and wheelbase must be positive, speed non-negative");
        }
        if !(self.max_steer_deg > 0.0 && self.max_steer_deg < 90.0) {
            return fail("max_steer_deg must lie in (0, 90)");
        }
        if !(self.vehicle_length > 0.0 && self.vehicle_width > 0.0 && self.view_m > 0.0) {
            return fail("vehicle dimensions and view extent must be positive");
        }
        if !(0.0..=1.0).contains(&self.ego_row) {
            return fail("ego_row must lie in [0, 1]");
        }
        Ok(())
    }

    /// Distance the ego can cover in one episode.
    pub fn travel_m(&self) -> f64 {
        self.speed * self.dt * self.max_steps as f64
    }
}
