//! Numerical checks of first- and second-order necessary optimality
//! conditions for stochastic optimal controls under needle variations.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]
// `!(x <= bound)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod cli;
pub mod conditions;
pub mod error;
pub mod problem;
pub mod regression;
pub mod stats;
pub mod tensor;
pub mod variational;

pub use error::{Error, Result};
