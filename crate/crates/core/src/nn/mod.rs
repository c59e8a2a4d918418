//! Growth-pattern classifier: focal loss, compact conv stack, Adam training,
//! and finite-difference gradient verification.

pub mod focal;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod train;

pub use focal::{focal_loss, FocalLossParams, LossOutcome};
pub use gradcheck::gradient_check;
pub use model::{ClassifierError, ClassifierModel, PredictionRecord};
pub use train::{train_classifier, EpochStats, LossKind, TrainConfig, TrainReport};
