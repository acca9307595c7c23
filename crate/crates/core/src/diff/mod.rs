//! Dense tensors with reverse-mode differentiation, neural layers, Adam and
//! the checkpoint format.

mod adam;
mod checkpoint;
mod nn;
mod ops;
mod params;
mod tape;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, NamedTensor};
pub use nn::{attention_pool, conv1d, film, linear, prelu, ConvSpec, Padding};
pub use params::{Bound, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
