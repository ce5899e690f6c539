//! Experiment runner for the iwgan laboratory: config handling, training
//! orchestration and the evaluation commands behind the `iwgan` binary.

pub mod commands;
pub mod config;
pub mod evaluation;
pub mod svg;
