//! Neural equalizer with successive interference cancellation.

pub mod checkpoint;
pub mod features;
pub mod mlp;
pub mod sic;
pub mod train;

pub use features::{FeatureLayout, SicSchedule, Standardizer};
pub use mlp::{mlp_forward, Adam, DenseLayer, MlpParams};
pub use sic::{argmax, sdd_detect, sic_detect, stage_dataset, train_sic, Conditioning, SicReceiver, StageModel};
pub use train::{cross_entropy, mlp_train, LabeledSet, TrainReport, TrainSpec};
