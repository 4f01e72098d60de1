//! Self-contained clipped-surrogate PPO.
//!
//! Dense kernels and reverse-mode gradients are implemented in-repo; the
//! network sizes involved (two small hidden layers) do not justify an
//! external tensor dependency, and keeping the backward pass explicit makes
//! the finite-difference gradient checks straightforward.

pub mod checkpoint;
pub mod gae;
pub mod loss;
pub mod nn;
pub mod train;

pub use checkpoint::Checkpoint;
pub use gae::gae_advantages;
pub use loss::{grad_check, ppo_loss, ppo_loss_grad, LossDiagnostics};
pub use nn::{Adam, GaussianPolicy, Mlp, RunningNorm};
pub use train::{BatchStats, PpoConfig, RlEnv, Rollout, StepOutcome, TrainOutcome, Trainer};
