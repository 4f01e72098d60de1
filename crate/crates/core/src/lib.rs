//! Desk-scale chiller-plant energy management toolkit.
//!
//! The crate models a bank of water-cooled chillers serving a campus cooling
//! load, and provides everything needed to benchmark control strategies
//! against each other:
//!
//! - [`plant`]: steady-state physics of the chiller bank (power curves,
//!   proportional load split, return-water temperature) plus constraint
//!   evaluation and power-curve fitting.
//! - [`oracle`]: a brute-force per-step dispatch minimizer used as the
//!   lower bound in benchmarks.
//! - [`forecast`]: building-load forecasting baselines behind a single
//!   forecaster contract, plus a synthetic campus-load generator.
//! - [`env`]: an episodic control environment with a prioritized
//!   constraint-first reward.
//! - [`ppo`]: a self-contained actor-critic PPO implementation with
//!   in-repo dense kernels and reverse-mode gradients.
//! - [`control`]: the rule-based baseline and the RL controllers
//!   (one-step and receding-horizon) evaluated by the benchmark CLI.

pub mod config;
pub mod control;
pub mod env;
pub mod error;
pub mod forecast;
pub mod io;
pub mod oracle;
pub mod plant;
pub mod ppo;

pub use error::{CoreError, Result};
