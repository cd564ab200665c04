// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoherence;
pub mod ensemble;
pub mod error;
mod parallel;
pub mod quantum_core;
pub mod random_phase;
pub mod supersystem;
pub mod symmetry;
pub mod weisskopf_wigner;

pub use error::{Error, Result};
