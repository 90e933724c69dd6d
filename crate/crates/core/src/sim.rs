//! Network rollouts with either engine.
//!
//! Both engines run the same schedule shape: an outer sequential loop over
//! stages (single steps for the standard engine, Blocks of `arp` steps for the
//! Block engine), and inside each stage every layer in order, with batch rows
//! processed in parallel.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{self, BlockScratch, BlockSinks, BlockState};
use crate::error::{invalid_arg, Result};
use crate::kernel::LayerKernel;
use crate::params::Network;
use crate::real::Real;
use crate::spikes::{Drive, Input, RowInput, SpikeTensor};
use crate::standard::{ReadoutState, StandardLayerState, StepSinks};

/// Which formulation simulates the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// One step at a time.
    Standard,
    /// One refractory-period Block at a time.
    #[default]
    Block,
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Engine::Standard),
            "block" => Ok(Engine::Block),
            other => Err(format!("unknown engine `{other}` (expected standard or block)")),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Standard => "standard",
            Engine::Block => "block",
        })
    }
}

/// Simulation controls that are not part of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub engine: Engine,
    /// Membrane of every neuron before the first step.
    #[serde(default)]
    pub v_init: f64,
    /// Adaptation of every neuron before the first step.
    #[serde(default)]
    pub a_init: f64,
    /// Keep membrane and margin traces of every layer.
    #[serde(default)]
    pub record_traces: bool,
}

impl SimConfig {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            v_init: 0.0,
            a_init: 0.0,
            record_traces: false,
        }
    }

    pub fn with_traces(mut self) -> Self {
        self.record_traces = true;
        self
    }
}

/// Per-layer traces, dims `(batch, neurons, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<F> {
    /// Membrane with resets applied.
    pub membrane: Array3<F>,
    /// Membrane minus threshold; empty for the readout layer.
    pub margin: Array3<F>,
}

/// Outcome of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<F> {
    /// Spikes of every hidden layer.
    pub spikes: Vec<SpikeTensor>,
    /// Readout membrane summed over time, dims `(batch, classes)`.
    pub readout: Option<Array2<F>>,
    /// Sequential stages executed per layer, readout last.
    pub stages: Vec<usize>,
    /// Hidden layers then readout, when traces were requested.
    pub traces: Option<Vec<LayerTrace<F>>>,
}

impl<F: Real> Rollout<F> {
    pub fn output(&self) -> Option<&SpikeTensor> {
        self.spikes.last()
    }
}

/// Forward values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    pub(crate) engine: Engine,
    pub(crate) arp: usize,
    pub(crate) steps: usize,
    pub(crate) padded: usize,
    pub(crate) v_init: F,
    pub(crate) a_init: F,
    pub(crate) inputs: Vec<RowInput<F>>,
    pub(crate) rows: Vec<RowTape<F>>,
}

impl<F> Tape<F> {
    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn batch(&self) -> usize {
        self.rows.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RowTape<F> {
    pub layers: Vec<LayerTape<F>>,
    pub readout: Option<ReadoutTape<F>>,
}

/// Time-major `[t][n]` records of one hidden layer over the padded horizon.
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerTape<F> {
    pub spikes: Vec<u8>,
    /// Standard: membrane. Block: reset-free membrane.
    pub v: Vec<F>,
    /// Input current after the refractory gate.
    pub cur: Vec<F>,
    /// Standard only: adaptation per step.
    pub a: Vec<F>,
    /// Standard only: refractory gate per step.
    pub gate: Vec<u8>,
    /// Block only: initial membrane per Block, `[block][n]`.
    pub v0: Vec<F>,
    /// Block only: initial adaptation per Block, `[block][n]`.
    pub a0: Vec<F>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ReadoutTape<F> {
    pub u: Vec<F>,
    pub cur: Vec<F>,
}

/// Simulates `net` on `input` with the engine chosen in `cfg`.
pub fn simulate<F: Real>(net: &Network<F>, input: Input<'_, F>, cfg: &SimConfig) -> Result<Rollout<F>> {
    run(net, input, cfg, false).map(|(r, _)| r)
}

/// Like [`simulate`], also returning the tape needed for gradients.
pub fn simulate_with_tape<F: Real>(
    net: &Network<F>,
    input: Input<'_, F>,
    cfg: &SimConfig,
) -> Result<(Rollout<F>, Tape<F>)> {
    let (r, t) = run(net, input, cfg, true)?;
    Ok((r, t.expect("tape requested")))
}

/// Sequential reference rollout.
pub fn rollout_standard<F: Real>(net: &Network<F>, input: &SpikeTensor) -> Result<Rollout<F>> {
    simulate(net, Input::Spikes(input), &SimConfig::new(Engine::Standard))
}

/// Block rollout.
pub fn rollout_block<F: Real>(net: &Network<F>, input: &SpikeTensor) -> Result<Rollout<F>> {
    simulate(net, Input::Spikes(input), &SimConfig::new(Engine::Block))
}

struct RowRun<F> {
    input: RowInput<F>,
    std_states: Vec<StandardLayerState<F>>,
    blk_states: Vec<BlockState<F>>,
    scratch: Vec<BlockScratch<F>>,
    readout_state: Option<ReadoutState<F>>,
    readout_v0: Vec<F>,
    readout_sum: Vec<F>,
    layers: Vec<LayerTape<F>>,
    traces: Vec<(Vec<F>, Vec<F>)>,
    readout_tape: Option<ReadoutTape<F>>,
    readout_trace: Vec<F>,
}

fn run<F: Real>(
    net: &Network<F>,
    input: Input<'_, F>,
    cfg: &SimConfig,
    tape: bool,
) -> Result<(Rollout<F>, Option<Tape<F>>)> {
    net.validate()?;
    let (batch, n_in, steps) = input.dims();
    if steps == 0 {
        return invalid_arg("input has zero time steps");
    }
    if n_in != net.config.n_in {
        return invalid_arg(format!("input has {n_in} channels, network expects {}", net.config.n_in));
    }
    let arp = net.config.arp_steps;
    let kernels: Vec<LayerKernel<F>> = net
        .layers
        .iter()
        .map(|l| LayerKernel::new(l, arp))
        .collect::<Result<_>>()?;
    let ro_kernel = net.readout.as_ref().map(|l| LayerKernel::new(l, arp)).transpose()?;
    let (stage_len, n_stages) = match cfg.engine {
        Engine::Standard => (1, steps),
        Engine::Block => {
            for k in &kernels {
                k.check_block_carry()?;
            }
            (arp, steps.div_ceil(arp))
        }
    };
    let padded = stage_len * n_stages;
    let (v_init, a_init) = (F::of(cfg.v_init), F::of(cfg.a_init));
    let record = cfg.record_traces;
    let widths: Vec<usize> = kernels.iter().map(|k| k.n_out()).collect();
    let classes = ro_kernel.as_ref().map_or(0, |k| k.n_out());
    let n_blocks = n_stages;

    let mut rows: Vec<RowRun<F>> = input
        .time_major_rows(padded)
        .into_iter()
        .map(|row_input| {
            let layers = widths
                .iter()
                .map(|&w| {
                    let mut lt = LayerTape {
                        spikes: vec![0; padded * w],
                        ..Default::default()
                    };
                    if tape {
                        lt.v = vec![F::zero(); padded * w];
                        lt.cur = vec![F::zero(); padded * w];
                        match cfg.engine {
                            Engine::Standard => {
                                lt.a = vec![F::zero(); padded * w];
                                lt.gate = vec![0; padded * w];
                            }
                            Engine::Block => {
                                lt.v0 = vec![F::zero(); n_blocks * w];
                                lt.a0 = vec![F::zero(); n_blocks * w];
                            }
                        }
                    }
                    lt
                })
                .collect();
            let traces = if record {
                widths
                    .iter()
                    .map(|&w| (vec![F::zero(); padded * w], vec![F::zero(); padded * w]))
                    .collect()
            } else {
                Vec::new()
            };
            RowRun {
                input: row_input,
                std_states: match cfg.engine {
                    Engine::Standard => widths
                        .iter()
                        .map(|&w| StandardLayerState::new(w, arp, v_init, a_init))
                        .collect::<Result<_>>()
                        .expect("arp validated"),
                    Engine::Block => Vec::new(),
                },
                blk_states: match cfg.engine {
                    Engine::Standard => Vec::new(),
                    Engine::Block => widths.iter().map(|&w| BlockState::new(w, arp, v_init, a_init)).collect(),
                },
                scratch: match cfg.engine {
                    Engine::Standard => Vec::new(),
                    Engine::Block => widths
                        .iter()
                        .chain(std::iter::once(&classes).filter(|&&c| c > 0))
                        .map(|&w| BlockScratch::new(w, arp))
                        .collect(),
                },
                readout_state: (classes > 0 && cfg.engine == Engine::Standard)
                    .then(|| ReadoutState::new(classes, v_init)),
                readout_v0: vec![v_init; classes],
                readout_sum: vec![F::zero(); classes],
                layers,
                traces,
                readout_tape: (tape && classes > 0).then(|| ReadoutTape {
                    u: vec![F::zero(); padded * classes],
                    cur: vec![F::zero(); padded * classes],
                }),
                readout_trace: if record { vec![F::zero(); padded * classes] } else { Vec::new() },
            }
        })
        .collect();

    let n_layers = kernels.len();
    let mut stages = vec![0usize; n_layers + usize::from(classes > 0)];
    let stage = |row: &mut RowRun<F>, s: usize| {
        let t0 = s * stage_len;
        for l in 0..n_layers {
            let k = &kernels[l];
            let w = k.n_out();
            let span = t0 * w..(t0 + stage_len) * w;
            let (below, here) = row.layers.split_at_mut(l);
            let drive = if l == 0 {
                row.input.slice(n_in, t0, stage_len)
            } else {
                let prev = &below[l - 1];
                Drive::Spikes(&prev.spikes[t0 * widths[l - 1]..(t0 + stage_len) * widths[l - 1]])
            };
            let lt = &mut here[0];
            let (mem, margin) = match row.traces.get_mut(l) {
                Some((m, g)) => (Some(&mut m[span.clone()]), Some(&mut g[span.clone()])),
                None => (None, None),
            };
            match cfg.engine {
                Engine::Standard => {
                    let sinks = StepSinks {
                        membrane: if tape { Some(&mut lt.v[span.clone()]) } else { mem },
                        margin,
                        current: tape.then(|| &mut lt.cur[span.clone()]),
                        adaptation: tape.then(|| &mut lt.a[span.clone()]),
                        gate: tape.then(|| &mut lt.gate[span.clone()]),
                    };
                    row.std_states[l].step_into(k, drive, &mut lt.spikes[span.clone()], sinks);
                    if tape && record {
                        let (m, _) = &mut row.traces[l];
                        m[span.clone()].copy_from_slice(&lt.v[span.clone()]);
                    }
                }
                Engine::Block => {
                    if tape {
                        let st = &row.blk_states[l];
                        lt.v0[s * w..(s + 1) * w].copy_from_slice(&st.v0);
                        lt.a0[s * w..(s + 1) * w].copy_from_slice(&st.a0);
                    }
                    let sinks = BlockSinks {
                        membrane: mem,
                        margin,
                        current: tape.then(|| &mut lt.cur[span.clone()]),
                        v_tilde: tape.then(|| &mut lt.v[span.clone()]),
                        v_end: None,
                        z: None,
                    };
                    block::engine::advance(
                        k,
                        &mut row.blk_states[l],
                        drive,
                        &mut lt.spikes[span.clone()],
                        &mut row.scratch[l],
                        sinks,
                    );
                }
            }
        }
        if let Some(k) = &ro_kernel {
            let c = k.n_out();
            let span = t0 * c..(t0 + stage_len) * c;
            let drive = match row.layers.last() {
                Some(top) => {
                    let w = top.spikes.len() / padded;
                    Drive::Spikes(&top.spikes[t0 * w..(t0 + stage_len) * w])
                }
                None => row.input.slice(n_in, t0, stage_len),
            };
            let count = steps.saturating_sub(t0).min(stage_len);
            let (mem_tape, cur_tape) = match row.readout_tape.as_mut() {
                Some(rt) => (Some(&mut rt.u[span.clone()]), Some(&mut rt.cur[span.clone()])),
                None => (None, None),
            };
            let mem = match mem_tape {
                Some(m) => Some(m),
                None if record => Some(&mut row.readout_trace[span.clone()]),
                None => None,
            };
            match cfg.engine {
                Engine::Standard => {
                    let st = row.readout_state.as_mut().expect("readout state");
                    st.step(k, drive, count > 0, mem, cur_tape);
                }
                Engine::Block => {
                    block::engine::advance_readout(
                        k,
                        &mut row.readout_v0,
                        drive,
                        count,
                        &mut row.readout_sum,
                        row.scratch.last_mut().expect("readout scratch"),
                        mem,
                        cur_tape,
                    );
                }
            }
            if record {
                if let Some(rt) = &row.readout_tape {
                    row.readout_trace[span.clone()].copy_from_slice(&rt.u[span]);
                }
            }
        }
    };
    for s in 0..n_stages {
        if rows.len() > 1 {
            rows.par_iter_mut().for_each(|row| stage(row, s));
        } else {
            rows.iter_mut().for_each(|row| stage(row, s));
        }
        stages.iter_mut().for_each(|c| *c += 1);
    }

    let spikes = (0..n_layers)
        .map(|l| {
            let bufs: Vec<Vec<u8>> = rows.iter().map(|r| r.layers[l].spikes.clone()).collect();
            SpikeTensor::from_time_major_rows(&bufs, widths[l], steps)
        })
        .collect();
    let readout = (classes > 0).then(|| {
        Array2::from_shape_fn((batch, classes), |(b, c)| match cfg.engine {
            Engine::Standard => rows[b].readout_state.as_ref().expect("readout").sum[c],
            Engine::Block => rows[b].readout_sum[c],
        })
    });
    let traces = record.then(|| {
        let to3 = |get: &dyn Fn(&RowRun<F>) -> &[F], w: usize| {
            Array3::from_shape_fn((batch, w, steps), |(b, n, t)| get(&rows[b])[t * w + n])
        };
        let mut out: Vec<LayerTrace<F>> = (0..n_layers)
            .map(|l| LayerTrace {
                membrane: to3(&|r| &r.traces[l].0, widths[l]),
                margin: to3(&|r| &r.traces[l].1, widths[l]),
            })
            .collect();
        if classes > 0 {
            out.push(LayerTrace {
                membrane: to3(&|r| &r.readout_trace, classes),
                margin: Array3::zeros((batch, 0, steps)),
            });
        }
        out
    });
    let rollout = Rollout {
        spikes,
        readout,
        stages,
        traces,
    };
    let tape = tape.then(|| {
        let mut inputs = Vec::with_capacity(rows.len());
        let mut row_tapes = Vec::with_capacity(rows.len());
        for r in rows {
            inputs.push(r.input);
            row_tapes.push(RowTape {
                layers: r.layers,
                readout: r.readout_tape,
            });
        }
        Tape {
            engine: cfg.engine,
            arp,
            steps,
            padded,
            v_init,
            a_init,
            inputs,
            rows: row_tapes,
        }
    });
    Ok((rollout, tape))
}
