//! Dueling deep-Q learning with prioritized experience replay.

pub mod adam;
pub mod checkpoint;
pub mod net;
pub mod replay;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::QNetwork;
pub use replay::{Experience, ReplayMemory};
pub use train::{epsilon, infer, td_target, train, train_with_progress, LogRow, TrainConfig, TrainOutcome};
