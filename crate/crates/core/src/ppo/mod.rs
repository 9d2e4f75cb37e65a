//! The PPO update rule with a quantile critic and moment-penalized advantages.

mod batch;
mod checkpoint;
mod config;
mod gae;
mod loss;
mod policy;
mod update;

pub use batch::{draw_minibatches, regularize_advantages, Collector, RolloutBatch};
pub use checkpoint::Checkpoint;
pub use config::{Algo, LandscapeSource, PpoConfig};
pub use gae::{compute_gae, discounted_returns, standardize};
pub use loss::{
    clipped_objective, critic_loss, landscape_ppo_loss, ppo_surrogate, LandscapeOutput, LandscapeTerms,
    SurrogateOutput,
};
pub use policy::{ActorCritic, GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use update::{update_once, AgentState, UpdateStats};
