pub mod clip;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod heads;
pub mod nn;
pub mod ppo;
pub mod pretrain;
pub mod sim;
pub mod ssl;

pub use clip::{FloatClip, VideoClip};
pub use error::{Error, Result};
