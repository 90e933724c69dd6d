//! Single-neuron fits to current-injection recordings.

pub mod io;
pub mod metrics;
pub mod neuron;
pub mod preprocess;
pub mod synthetic;

pub use metrics::{etv, van_rossum, van_rossum_grad, EtvConfig, EtvSegment, VanRossumConfig};
pub use neuron::{arp_steps, fit_neuron, fit_neuron_from, predict, score, FitConfig, FitReport, NeuronParams};
pub use preprocess::{prepare, preprocess, CurrentTrace, NormStats, Recording, Split, Stimulus};
pub use synthetic::{synthetic_recordings, GroundTruth, SyntheticSpec};
