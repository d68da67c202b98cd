// Range checks are written as `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cells;
pub mod classifier;
pub mod data_io;
pub mod error;
pub mod generator;
pub mod ink;
pub mod numcore;
pub mod optim;

pub use error::{Error, Result};
