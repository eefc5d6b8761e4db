// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod heterogeneity;
pub mod models;
pub mod numerics;
pub mod report;

pub use error::{NmaError, Result};
