// `!(x > 0.0)` is used deliberately so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod networks;
pub mod pipeline;
pub mod rng;
pub mod sql;
pub mod synthrig;

pub use error::{Error, Result};
