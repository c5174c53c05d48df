//! Resampling-based empirical best prediction and nonnegative MSPE
//! estimation for two-level small-area models.

// NaN-aware `!(x > 0.0)` checks and index loops over small matrices are
// deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimators;
pub mod models;
pub mod mspe;
pub mod numerics;
pub mod params;
pub mod predictor;
pub mod rng;
pub mod sim;
pub mod target;
