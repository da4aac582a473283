//! Dense arithmetic, parameter storage and reverse-mode differentiation.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use matrix::{dot, log_sum_exp, sigmoid, softmax, Matrix, Vector};
pub use params::{ParamEntry, ParamStore, StoreId};
pub use tape::{forward_scalar, Tape, Var};
