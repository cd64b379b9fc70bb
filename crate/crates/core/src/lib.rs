//! Trajectory prediction and intercept feasibility from bounding-box tracks.
//!
//! Pipeline: [`track`] holds validated box tracks, [`tokenizer`] turns them
//! into 8-D motion tokens and sliding-window examples, [`transformer`] is a
//! small causal transformer with drone, behavior, intent and trajectory heads,
//! [`training`] fits it, [`predictors`] wraps it alongside three baselines,
//! and [`eval`] scores any predictor for displacement error, classification
//! accuracy and Intercept Success Rate ([`kinematics`]).
//!
//! [`synth`] generates labeled synthetic tracks, [`ingest`] reads and writes
//! track files, and [`cli`] and [`config`] back the `p2p` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
mod fsutil;
pub mod ingest;
pub mod kinematics;
pub mod predictors;
pub mod synth;
pub mod tokenizer;
pub mod track;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
