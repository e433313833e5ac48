//! The instruction-driven editing model: denoiser, training stages,
//! checkpoints, edit-type prediction and inference.

pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod edit;
pub mod predict;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use config::ModelConfig;
pub use denoiser::{AnySdModel, Forward, Stage};
pub use edit::{edit_image, EditOptions, EditOutcome};
pub use predict::{predict_edit_type, Confidence, Prediction};
pub use train::{train_stage1, train_stage2, TrainConfig, TrainReport};
