//! Actor-critic ensemble weighting.

pub mod agent;
pub mod buffer;
pub mod train;

pub use agent::{
    actor_forward, compute_reward, critic_forward, ensemble_predict, ActorCriticConfig,
    AgentParams, AgentSpec, RewardKind,
};
pub use buffer::{ReplayBuffer, Transition};
pub use train::{train, EnvStreams, FarmStream, TrainLogRow, TrainOutcome};
