//! Block reformulation: a layer advances `arp` steps at a time, and inside a
//! Block no step depends on spikes emitted earlier in the same Block.

pub(crate) mod engine;
mod primitives;

pub use engine::{run_block, BlockOutput};
pub(crate) use engine::{BlockScratch, BlockSinks};
pub use primitives::{
    block_input_current, carry_adaptation, carry_membrane, faulty_spikes, first_spike_only,
    latent_spike_timing, no_reset_membrane, threshold_curve,
};

use crate::real::Real;

/// Carry between consecutive Blocks of one layer and one batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState<F> {
    pub v0: Vec<F>,
    pub a0: Vec<F>,
    /// Spikes of the previous Block, time-major `[t][n]`.
    pub prev_s: Vec<u8>,
    /// Step of each neuron's spike in the previous Block, or `arp` if none.
    /// Latent timings there are zero exactly before this step.
    pub prev_first: Vec<u32>,
}

impl<F: Real> BlockState<F> {
    /// State before the first Block: no spike history.
    pub fn new(neurons: usize, arp: usize, v_init: F, a_init: F) -> Self {
        Self {
            v0: vec![v_init; neurons],
            a0: vec![a_init; neurons],
            prev_s: vec![0; arp * neurons],
            prev_first: vec![arp as u32; neurons],
        }
    }

    pub fn neurons(&self) -> usize {
        self.v0.len()
    }

    pub fn arp(&self) -> usize {
        self.prev_s.len() / self.neurons().max(1)
    }

    /// Whether each neuron spiked in the previous Block.
    pub fn prev_spiked(&self) -> Vec<u8> {
        let none = self.arp() as u32;
        self.prev_first.iter().map(|&f| (f != none) as u8).collect()
    }
}
