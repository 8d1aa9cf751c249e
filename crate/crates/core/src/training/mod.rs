//! Mixed imitation / actor-critic training: rewards, returns, losses, the
//! critic, AdamW and the batch loop.

pub mod critic;
mod loss;
mod optim;
mod rewards;
mod trainer;

pub use critic::{critic_value, CriticParams};
pub use loss::{critic_loss, navigation_loss, weighted_sum, PolicyTrace, TeacherTrace};
pub use optim::{accumulate, clip_global_norm, global_norm, AdamW, AdamWConfig};
pub use rewards::{
    advantages, discounted_returns, dtw, fidelity_rewards, ndtw, progress_reward, reward_parts,
    total_reward, RewardConfig, RewardParts,
};
pub use trainer::{
    episode_gradients, evaluate_model, rollout_rewards, EpisodeKind, EpisodeOutcome, EvalOutput,
    IterStats, StatsRow, TrainConfig, TrainSummary, Trainer, STATS_HEADER,
};
