//! End-to-end toy pipeline: synthetic questions, a frozen assistant that
//! proposes latent thoughts, a trainable projection and energy network
//! that calibrate them, and a frozen base decoder that reads them.

pub mod assistant;
pub mod base;
pub mod evaluate;
pub mod head;
pub mod infer;
pub mod pretrain;
pub mod task;
pub mod train;

pub use assistant::ToyAssistantModel;
pub use base::{BaseConfig, ToyBaseModel};
pub use evaluate::{evaluate, EvalOptions};
pub use head::{Projection, TrainableHead};
pub use infer::{infer, sample_chains, ChainSet};
pub use pretrain::{pretrain_base, FrozenModels};
pub use task::{Dataset, TaskConfig, TaskInstance};
pub use train::{init_head, train, train_step, StepRecord};
