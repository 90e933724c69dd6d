use crate::block::BlockState;
use crate::error::{invalid_arg, Result};
use crate::kernel::LayerKernel;
use crate::real::Real;
use crate::scan::prefix_sum;
use crate::spikes::Drive;

/// Result of one Block of one layer and one batch row, time-major `[t][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput<F> {
    pub spikes: Vec<u8>,
    pub z: Vec<u32>,
    /// Reset-free membrane at the last step of the Block.
    pub v_end: Vec<F>,
    pub next: BlockState<F>,
}

/// Simulates one Block of a hidden layer.
pub fn run_block<F: Real>(
    kernel: &LayerKernel<F>,
    ff: Drive<'_, F>,
    state: &BlockState<F>,
) -> Result<BlockOutput<F>> {
    let (n, k) = (kernel.n_out(), kernel.arp);
    let ff_len = match ff {
        Drive::Spikes(x) => x.len(),
        Drive::Current(x) => x.len(),
    };
    if kernel.readout || ff_len != k * kernel.n_in() || state.neurons() != n || state.arp() != k {
        return invalid_arg(format!(
            "run_block: drive has {ff_len} values for a ({} -> {n}) layer over {k} steps",
            kernel.n_in()
        ));
    }
    kernel.check_block_carry()?;
    let mut next = state.clone();
    let mut sc = BlockScratch::new(n, k);
    let mut spikes = vec![0; k * n];
    let mut v_end = vec![F::zero(); n];
    let mut z = vec![0; k * n];
    advance(
        kernel,
        &mut next,
        ff,
        &mut spikes,
        &mut sc,
        BlockSinks {
            v_end: Some(&mut v_end),
            z: Some(&mut z),
            ..Default::default()
        },
    );
    Ok(BlockOutput {
        spikes,
        z,
        v_end,
        next,
    })
}

/// Reusable buffers for one layer of one batch row. Hidden layers only use
/// single rows; the readout keeps a whole Block of currents and membranes.
#[derive(Debug, Clone)]
pub(crate) struct BlockScratch<F> {
    pub cur: Vec<F>,
    pub vt: Vec<F>,
    /// Reset-free membrane of the current step.
    pub v: Vec<F>,
    /// Faulty spikes so far, and their running sum `z`.
    pub count: Vec<u32>,
    pub z: Vec<u32>,
    /// Steps with `z > 1`.
    pub m: Vec<u32>,
    /// First step of the Block that is not refractory.
    pub open_at: Vec<u32>,
}

impl<F: Real> BlockScratch<F> {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            cur: vec![F::zero(); k * n],
            vt: vec![F::zero(); k * n],
            v: vec![F::zero(); n],
            count: vec![0; n],
            z: vec![0; n],
            m: vec![0; n],
            open_at: vec![0; n],
        }
    }
}

/// Optional per-Block outputs, time-major `[t][n]` unless noted.
#[derive(Default)]
pub(crate) struct BlockSinks<'a, F> {
    /// Membrane with resets applied.
    pub membrane: Option<&'a mut [F]>,
    /// Membrane with resets applied, minus threshold.
    pub margin: Option<&'a mut [F]>,
    /// Input current after the refractory mask.
    pub current: Option<&'a mut [F]>,
    /// Reset-free membrane.
    pub v_tilde: Option<&'a mut [F]>,
    /// Reset-free membrane at the last step, per neuron.
    pub v_end: Option<&'a mut [F]>,
    /// Latent spike timings.
    pub z: Option<&'a mut [u32]>,
}

/// Reset-free membrane `v_tilde` over a Block from currents already in `vt`:
/// `v_tilde[t] = beta v_tilde[t-1] + (1 - beta) I[t]` starting from `v0`.
#[inline]
pub(crate) fn membrane_in_place<F: Real>(kernel: &LayerKernel<F>, vt: &mut [F], v0: &[F]) {
    let n = kernel.n_out();
    let mut prev: &[F] = v0;
    for row in vt.chunks_exact_mut(n) {
        for (((x, &v), &b), &g) in row.iter_mut().zip(prev).zip(&kernel.beta).zip(&kernel.one_minus_beta) {
            *x = b * v + g * *x;
        }
        prev = row;
    }
}

/// Margins `v_tilde - theta` and latent timings for a hidden layer Block.
#[inline]
pub(crate) fn latent_in_place<F: Real>(
    kernel: &LayerKernel<F>,
    vt: &[F],
    a0: &[F],
    margin: &mut [F],
    z: &mut [u32],
    count: &mut [u32],
) {
    // running spike count per step, then its running sum
    let n = kernel.n_out();
    let count = &mut count[..n];
    count.iter_mut().for_each(|c| *c = 0);
    for (((mrow, vrow), dp), zrow) in margin
        .chunks_exact_mut(n)
        .zip(vt.chunks_exact(n))
        .zip(kernel.dp_pow.chunks_exact(n))
        .zip(z.chunks_exact_mut(n))
    {
        for ((((m, &v), &dp), &a), c) in mrow.iter_mut().zip(vrow).zip(dp).zip(a0).zip(count.iter_mut()) {
            *m = v - (F::one() + dp * a);
            *c += (*m > F::zero()) as u32;
        }
        zrow.copy_from_slice(count);
    }
    prefix_sum(z, n);
}

/// `p^(m-1)`: the spike's contribution to the next Block's initial adaptation.
#[inline]
pub(crate) fn spike_carry<F: Real>(p: F, m: u32) -> F {
    if p == F::zero() {
        if m == 1 {
            F::one()
        } else {
            F::zero()
        }
    } else {
        p.powi(m as i32 - 1)
    }
}

/// Advances a hidden layer by one Block and updates `state` in place.
///
/// Every quantity of step `t` depends only on the Block's initial state and on
/// inputs up to `t`, never on spikes emitted inside the Block, so the loop over
/// time carries no reset or refractory branch. Rows are processed one step at
/// a time to keep the working set small.
pub(crate) fn advance<F: Real>(
    kernel: &LayerKernel<F>,
    state: &mut BlockState<F>,
    ff: Drive<'_, F>,
    out: &mut [u8],
    sc: &mut BlockScratch<F>,
    mut sinks: BlockSinks<'_, F>,
) {
    let (n, k, n_in) = (kernel.n_out(), kernel.arp, kernel.n_in());
    let none = k as u32;
    // refractory until the step after the previous spike's ARP ends; a spike on
    // the previous Block's last step also resets the first step (arp = 1)
    for (o, &f) in sc.open_at.iter_mut().zip(&state.prev_first) {
        *o = match f {
            f if f == none => 0,
            f if f + 1 == none => f.max(1),
            f => f,
        };
    }
    sc.v.copy_from_slice(&state.v0);
    sc.count.iter_mut().for_each(|x| *x = 0);
    sc.z.iter_mut().for_each(|x| *x = 0);
    sc.m.iter_mut().for_each(|x| *x = 0);
    let mut first = std::mem::take(&mut state.prev_first);
    first.iter_mut().for_each(|x| *x = none);
    for t in 0..k {
        let row = t * n..(t + 1) * n;
        let cur = &mut sc.cur[..n];
        kernel.current(ff.step(n_in, t), Some(&state.prev_s[row.clone()]), cur);
        for (c, &o) in cur.iter_mut().zip(&sc.open_at) {
            if (t as u32) < o {
                *c = F::zero();
            }
        }
        if let Some(dst) = sinks.current.as_deref_mut() {
            dst[row.clone()].copy_from_slice(cur);
        }
        for (((v, &c), &b), &g) in sc.v.iter_mut().zip(cur.iter()).zip(&kernel.beta).zip(&kernel.one_minus_beta) {
            *v = b * *v + g * c;
        }
        if let Some(dst) = sinks.v_tilde.as_deref_mut() {
            dst[row.clone()].copy_from_slice(&sc.v);
        }
        let dp = &kernel.dp_pow[row.clone()];
        let step = t as u32;
        let lanes = sc
            .v
            .iter()
            .zip(dp)
            .zip(&state.a0)
            .zip(sc.count.iter_mut())
            .zip(sc.z.iter_mut())
            .zip(sc.m.iter_mut())
            .zip(out[row.clone()].iter_mut())
            .zip(first.iter_mut());
        for (((((((&v, &dp), &a), c), z), m), o), f) in lanes {
            let margin = v - (F::one() + dp * a);
            *c += (margin > F::zero()) as u32;
            *z += *c;
            *o = (*z == 1) as u8;
            *m += (*z > 1) as u32;
            *f = if *z == 1 { step } else { *f };
        }
        if sinks.membrane.is_some() || sinks.margin.is_some() || sinks.z.is_some() {
            for i in 0..n {
                let z = sc.z[i];
                let v = if z <= 1 { sc.v[i] } else { F::zero() };
                if let Some(dst) = sinks.membrane.as_deref_mut() {
                    dst[t * n + i] = v;
                }
                if let Some(dst) = sinks.margin.as_deref_mut() {
                    dst[t * n + i] = v - (F::one() + dp[i] * state.a0[i]);
                }
                if let Some(dst) = sinks.z.as_deref_mut() {
                    dst[t * n + i] = z;
                }
            }
        }
    }
    let last = (k - 1) * n;
    if let Some(dst) = sinks.v_end.as_deref_mut() {
        dst.copy_from_slice(&sc.v);
    }
    for i in 0..n {
        let spiked = first[i] != none;
        state.v0[i] = if spiked { F::zero() } else { sc.v[i] };
        let mut a = kernel.p_pow[last + i] * state.a0[i];
        if spiked {
            a += spike_carry(kernel.p[i], sc.m[i]);
        }
        state.a0[i] = a;
    }
    state.prev_first = first;
    state.prev_s.copy_from_slice(out);
}

/// Advances the readout integrator by one Block. The first `count` steps add
/// to `sum`; the last membrane becomes the next Block's `v0`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn advance_readout<F: Real>(
    kernel: &LayerKernel<F>,
    v0: &mut [F],
    ff: Drive<'_, F>,
    count: usize,
    sum: &mut [F],
    sc: &mut BlockScratch<F>,
    membrane: Option<&mut [F]>,
    current: Option<&mut [F]>,
) {
    let (n, k, n_in) = (kernel.n_out(), kernel.arp, kernel.n_in());
    for t in 0..k {
        kernel.current(ff.step(n_in, t), None, &mut sc.cur[t * n..(t + 1) * n]);
    }
    if let Some(dst) = current {
        dst.copy_from_slice(&sc.cur);
    }
    sc.vt.copy_from_slice(&sc.cur);
    membrane_in_place(kernel, &mut sc.vt, v0);
    for row in sc.vt.chunks_exact(n).take(count) {
        for (s, &u) in sum.iter_mut().zip(row) {
            *s += u;
        }
    }
    v0.copy_from_slice(&sc.vt[(k - 1) * n..]);
    if let Some(dst) = membrane {
        dst.copy_from_slice(&sc.vt);
    }
}
