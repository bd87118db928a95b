//! Sampling on implicitly defined submanifolds with set-valued projections.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod problems;
pub mod projection;
pub mod rng;
pub mod rootfind;
pub mod sampler;

pub use error::{Error, Result};
