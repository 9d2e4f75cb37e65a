//! PPO with a quantile distributional critic, skewness/kurtosis advantage
//! penalties, CVaR-penalized losses, and tools to measure how much a single
//! minibatch update moves the return of the updated policy.
//!
//! Modules, bottom-up:
//! * [`nn`]: tanh MLPs with exact gradients, Adam, checkpoint codec.
//! * [`envs`]: seeded bandit, pointmass and pendulum environments.
//! * [`critic`]: quantile atoms, quantile-Huber loss, moments and CVaR.
//! * [`ppo`]: GAE, clipped surrogate, penalties, the single-step update rule.
//! * [`stability`]: post-update distributions, alignment, sigma, CRS.
//! * [`train`]: the outer training loop for every algorithm variant.

pub mod critic;
pub mod envs;
mod error;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod stability;
pub mod train;

pub use critic::{MomentStats, QuantileAtoms};
pub use envs::{EnvSpec, EnvState};
pub use error::{Error, Result};
pub use nn::{AdamState, MlpParams};
pub use ppo::{Algo, AgentState, Checkpoint, PpoConfig, RolloutBatch};
pub use rng::Rng;
pub use stability::{AlignmentReport, EvalStreams, PostUpdateDistributions, StabilityConfig};
pub use train::{train, MetricsRow, RunStatus, TrainOutcome, TrainSchedule};
