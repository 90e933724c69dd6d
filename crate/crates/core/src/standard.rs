//! Sequential reference simulation, one time step at a time.

use crate::error::{invalid_arg, Result};
use crate::kernel::LayerKernel;
use crate::real::Real;
use crate::spikes::Drive;

/// State of one hidden layer for one batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLayerState<F> {
    pub v: Vec<F>,
    pub a: Vec<F>,
    /// Steps since the last spike, saturating at `arp`.
    pub c: Vec<usize>,
    pub prev_s: Vec<u8>,
    /// Last `arp` spike vectors; slot `head` holds the oldest.
    pub rec_buffer: Vec<u8>,
    head: usize,
    arp: usize,
    cur: Vec<F>,
}

/// Per-step values written out for traces and the gradient tape.
#[derive(Default)]
pub(crate) struct StepSinks<'a, F> {
    pub membrane: Option<&'a mut [F]>,
    pub margin: Option<&'a mut [F]>,
    pub current: Option<&'a mut [F]>,
    pub adaptation: Option<&'a mut [F]>,
    pub gate: Option<&'a mut [u8]>,
}

impl<F: Real> StandardLayerState<F> {
    /// Fresh state: membrane `v_init`, adaptation `a_init`, fully recovered
    /// counters and an empty recurrent history.
    pub fn new(neurons: usize, arp: usize, v_init: F, a_init: F) -> Result<Self> {
        if arp == 0 {
            return invalid_arg("arp_steps must be at least 1");
        }
        Ok(Self {
            v: vec![v_init; neurons],
            a: vec![a_init; neurons],
            c: vec![arp; neurons],
            prev_s: vec![0; neurons],
            rec_buffer: vec![0; arp * neurons],
            head: 0,
            arp,
            cur: vec![F::zero(); neurons],
        })
    }

    pub fn neurons(&self) -> usize {
        self.v.len()
    }

    /// Spikes emitted `arp` steps before the upcoming step.
    pub fn delayed_spikes(&self) -> &[u8] {
        let n = self.neurons();
        &self.rec_buffer[self.head * n..(self.head + 1) * n]
    }

    pub(crate) fn step_into(
        &mut self,
        kernel: &LayerKernel<F>,
        drive: Drive<'_, F>,
        out: &mut [u8],
        mut sinks: StepSinks<'_, F>,
    ) {
        let n = self.neurons();
        let arp = self.arp;
        let head = self.head;
        kernel.current(drive, Some(&self.rec_buffer[head * n..(head + 1) * n]), &mut self.cur);
        if let Some(dst) = sinks.current.as_deref_mut() {
            dst.copy_from_slice(&self.cur);
        }
        for i in 0..n {
            let spiked = self.prev_s[i] != 0;
            let a = kernel.p[i] * self.a[i] + if spiked { F::one() } else { F::zero() };
            self.a[i] = a;
            let theta = F::one() + kernel.d[i] * a;
            self.c[i] = (self.c[i] + 1).min(arp);
            let open = self.c[i] >= arp;
            let input = if open { self.cur[i] } else { F::zero() };
            let v = if spiked {
                F::zero()
            } else {
                kernel.beta[i] * self.v[i] + kernel.one_minus_beta[i] * input
            };
            self.v[i] = v;
            let s = v > theta;
            if s {
                self.c[i] = 0;
            }
            out[i] = s as u8;
            if let Some(x) = sinks.current.as_deref_mut() {
                x[i] = input;
            }
            if let Some(x) = sinks.gate.as_deref_mut() {
                x[i] = open as u8;
            }
            if let Some(x) = sinks.membrane.as_deref_mut() {
                x[i] = v;
            }
            if let Some(x) = sinks.margin.as_deref_mut() {
                x[i] = v - theta;
            }
            if let Some(x) = sinks.adaptation.as_deref_mut() {
                x[i] = a;
            }
        }
        self.prev_s.copy_from_slice(out);
        self.rec_buffer[head * n..(head + 1) * n].copy_from_slice(out);
        self.head = (head + 1) % arp;
    }
}

/// Advances one hidden layer by one step and returns its spikes.
pub fn step_layer<F: Real>(
    state: &mut StandardLayerState<F>,
    kernel: &LayerKernel<F>,
    ff_in: Drive<'_, F>,
) -> Result<Vec<u8>> {
    let len = match ff_in {
        Drive::Spikes(x) => x.len(),
        Drive::Current(x) => x.len(),
    };
    if len != kernel.n_in() || state.neurons() != kernel.n_out() || kernel.readout {
        return invalid_arg(format!(
            "step_layer: input width {len}, state width {}, layer ({} -> {})",
            state.neurons(),
            kernel.n_in(),
            kernel.n_out()
        ));
    }
    if state.arp != kernel.arp {
        return invalid_arg("state and layer disagree on arp_steps");
    }
    let mut out = vec![0; state.neurons()];
    state.step_into(kernel, ff_in, &mut out, StepSinks::default());
    Ok(out)
}

/// Non-spiking integrator state of the readout layer.
#[derive(Debug, Clone)]
pub(crate) struct ReadoutState<F> {
    pub u: Vec<F>,
    pub sum: Vec<F>,
    cur: Vec<F>,
}

impl<F: Real> ReadoutState<F> {
    pub fn new(classes: usize, v_init: F) -> Self {
        Self {
            u: vec![v_init; classes],
            sum: vec![F::zero(); classes],
            cur: vec![F::zero(); classes],
        }
    }

    /// One readout step; `count` adds the membrane to the output sum.
    pub fn step(
        &mut self,
        kernel: &LayerKernel<F>,
        drive: Drive<'_, F>,
        count: bool,
        membrane: Option<&mut [F]>,
        current: Option<&mut [F]>,
    ) {
        kernel.current(drive, None, &mut self.cur);
        for i in 0..self.u.len() {
            self.u[i] = kernel.beta[i] * self.u[i] + kernel.one_minus_beta[i] * self.cur[i];
            if count {
                self.sum[i] += self.u[i];
            }
        }
        if let Some(m) = membrane {
            m.copy_from_slice(&self.u);
        }
        if let Some(c) = current {
            c.copy_from_slice(&self.cur);
        }
    }
}
