//! GRU classifier, losses, optimizers and the training loop.

pub mod gru;
pub mod loss;
pub mod optim;
pub mod train;

pub use gru::{gru_backward, gru_forward, GruCache, GruStack, ModelConfig};
pub use loss::{bce_loss, classification_loss, cross_entropy_loss};
pub use optim::{LrCorrections, Optimizer, OptimizerConfig, OptimizerKind, ParamGroup, ParamSlot};
pub use train::{predict, train_loop, EpochRecord, Preprocessing, TrainConfig, TrainOutcome};
