//! Centralised-training, decentralised-execution PPO built from scratch.

pub mod adam;
pub mod checkpoint;
pub mod gae;
pub mod losses;
pub mod mlp;
pub mod policy;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use gae::compute_gae;
pub use losses::{critic_loss, ppo_actor_loss};
pub use mlp::Mlp;
pub use policy::GaussianPolicy;
pub use trainer::{
    actor_loss_and_grad, critic_loss_and_grad, train, ActorSample, RolloutBuffer, StepRecord, TrainedPolicy, Trainer,
    TrainerConfig, TrainingLogRow,
};
