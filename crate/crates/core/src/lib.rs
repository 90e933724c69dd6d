//! Adaptive leaky integrate-and-fire networks with an absolute refractory
//! period, simulated either one step at a time or one refractory-period Block
//! at a time.

pub mod bench;
pub mod cli;
pub mod block;
pub mod data_io;
pub mod error;
pub mod fitting;
pub mod kernel;
pub mod params;
pub mod real;
mod scan;
pub mod sim;
pub mod spikes;
pub mod standard;
pub mod train;

pub use error::{Error, Result};
pub use params::{LayerParams, NetConfig, Network};
pub use real::{Precision, Real};
pub use sim::{simulate, simulate_with_tape, Engine, Rollout, SimConfig};
pub use spikes::{Drive, Input, SpikeTensor};
