// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dfl;
pub mod error;
pub mod linear_mpc;
pub mod qcqp;
pub mod sim;
pub mod vehicle;
pub mod verify;

pub use error::{Error, Result};
