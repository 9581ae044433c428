//! Minimal numerical substrate: tensors, a reverse-mode tape, 3D convolution
//! kernels, parameter stores, Adam and the checkpoint container.

pub mod adam;
pub mod container;
pub mod conv;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use conv::ConvGeometry;
pub use params::{momentum_update, ParamLayout, ParamSpec, ParamStore};
pub use tape::{PoolKind, Tape, Var};
pub use tensor::Tensor;
