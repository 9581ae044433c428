//! Seedable 2D lane-driving world with rasterised stacked-frame observations
//! and the sparse lane/collision reward.

pub mod config;
pub mod render;
pub mod rollout;
pub mod route;
pub mod world;

pub use config::{LaneCharge, WorldConfig};
pub use rollout::{rollout_episode, rollout_traced, write_trace_csv, TraceRow};
pub use route::{Route, RouteId, RouteLayout};
pub use world::{compute_reward, EpisodeStats, Obstacle, StepInfo, StepResult, WorldState};
