//! Config-driven front end: simulation studies and one-shot estimation on a
//! CSV dataset.

pub mod config;
pub mod error;
pub mod input;
pub mod output;
pub mod run;
