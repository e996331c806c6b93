//! Training loop, optimizer, augmentation, configuration and checkpoints.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod train;

pub use adam::{adam_update, lr_schedule, AdamHyper, AdamState};
pub use augment::Augmentation;
pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, Checkpoint, StoredTensor, TrainState};
pub use config::{DataSource, TrainConfig};
pub use train::{initial_state, load_data, train, reference_poses, train_on, train_step, TrainLogRecord, TrainOutcome, FINAL_CHECKPOINT, LOG_FILE};
