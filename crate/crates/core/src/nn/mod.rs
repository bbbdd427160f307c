//! Minimal reverse-mode differentiation for 1D convolutional networks and
//! the Adam optimizer.

mod adam;
mod param;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{BnIds, BnStats, Gradients, Mode, NodeId, Tape, BN_EPS, BN_MOMENTUM};
pub use tensor::{Scalar, Tensor};
