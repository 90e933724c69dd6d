//! Surrogate-gradient training.

pub mod adam;
pub mod backward;
pub mod classifier;
pub mod loss;
pub mod surrogate;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, DetachPolicy, GradConfig, OutputGrad};
pub use loss::{cross_entropy_readout, predict};
pub use surrogate::{surrogate_derivative, SurrogateKind};
pub use classifier::{evaluate, train_classifier, train_step, Dataset, EpochLog, TrainConfig, TrainOutcome};
