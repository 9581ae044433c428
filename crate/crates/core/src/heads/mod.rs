//! Head networks between encoder outputs and the actor/critic.

pub mod checkpoint;
pub mod net;
pub mod variant;

pub use checkpoint::PolicyCheckpoint;
pub use net::{ActorOutput, HeadConfig, HeadNet};
pub use variant::{
    adapt_batch, adapt_features, adapt_on_tape, head_input_shape, HeadKind, HeadSize, HeadVariant,
};
