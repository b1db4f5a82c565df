//! Dense arrays, a reverse-mode tape, parameter storage and gradient checks.

pub mod array;
pub mod gradcheck;
pub mod params;
pub mod tape;

pub use array::DenseArray;
pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tape::{Backprop, Tape, Var};
