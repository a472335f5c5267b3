//! Training, checkpoints and duration-controlled generation.

pub mod checkpoint;
pub mod generate;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use generate::{generate, repeat_prompt, repetition_count, DecodeConfig, Generation, Prompt, Repetition, StopPolicy};
pub use train::{example_loss, Adam, RunConfig, StepRecord, TrainConfig, Trainer, SECOND_STAGE_WEIGHTS};
