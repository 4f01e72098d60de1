//! Benchmark assembly for the chiller-plant controllers: trace and
//! forecaster preparation, controller evaluation, and report generation.
//! The thin CLI in `main.rs` dispatches into [`commands`].

pub mod commands;
pub mod pipeline;
pub mod report;
pub mod runner;
