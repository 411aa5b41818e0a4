//! Arrays, reverse-mode differentiation, gradient checking and the
//! checkpoint container that everything else builds on.

mod array;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
mod params;
mod tape;

pub use array::Array;
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use params::{Init, Param, ParamStore, BUFFER_PREFIX, PARAM_PREFIX};
pub use tape::{apply_batch_norm_updates, BatchNormUpdate, Graph, Mode, Var, BN_EPS, BN_MOMENTUM, LN_EPS};
