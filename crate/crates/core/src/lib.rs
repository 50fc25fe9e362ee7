//! Variance-optimal stratified random sampling over static data and streams.

pub mod allocation;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod model;
pub mod offline;
pub mod reduction;
pub mod stream;

pub use error::{Error, Result};
pub use model::{Allocation, Record, Share, StratumId, StratumStats, StratumSummary};
pub use offline::Dataset;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
