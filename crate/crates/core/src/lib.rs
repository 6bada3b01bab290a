// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod io;
pub mod kernels;
pub mod mesh;
pub mod metrics;
pub mod recovery;
pub mod solver;

pub use error::{Error, Result};
