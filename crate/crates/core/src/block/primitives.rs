//! Single-trace building blocks of a Block, written directly from their
//! closed forms. The engine fuses them over neurons; these versions are kept
//! small and literal so they can be checked against the step recurrence.

use crate::block::BlockState;
use crate::error::{invalid_arg, Result};
use crate::kernel::LayerKernel;
use crate::params::{BETA_MAX, BETA_MIN};
use crate::real::Real;
use crate::spikes::Drive;

/// Membrane without reset over one Block, as a causal convolution.
///
/// The initial membrane enters as an extra input in slot 0, `v0 / (1 - beta)`,
/// and the kernel is `(1 - beta) beta^t`.
pub fn no_reset_membrane<F: Real>(current: &[F], beta: F, v0: F) -> Result<Vec<F>> {
    if !(F::of(BETA_MIN)..=F::of(BETA_MAX)).contains(&beta) {
        let b = beta.as_f64();
        return invalid_arg(format!("beta = {b} outside [{BETA_MIN}, {BETA_MAX}]"));
    }
    let gain = F::one() - beta;
    let mut aug = Vec::with_capacity(current.len() + 1);
    aug.push(v0 / gain);
    aug.extend_from_slice(current);
    let kernel: Vec<F> = (0..aug.len()).map(|t| gain * beta.powi(t as i32)).collect();
    Ok((1..aug.len())
        .map(|t| (0..=t).map(|j| kernel[t - j] * aug[j]).sum())
        .collect())
}

/// Threshold over one Block, `1 + d p^t a0` for `t = 1..=len`.
pub fn threshold_curve<F: Real>(d: F, p: F, a0: F, len: usize) -> Vec<F> {
    (1..=len).map(|t| F::one() + d * p.powi(t as i32) * a0).collect()
}

/// Spikes of the reset-free membrane: `v_tilde > theta`, strictly.
pub fn faulty_spikes<F: Real>(v_tilde: &[F], theta: &[F]) -> Vec<u8> {
    v_tilde.iter().zip(theta).map(|(v, th)| (v > th) as u8).collect()
}

/// `z[t] = sum_{k<=t} s[k] (t - k + 1)`. Its only entry equal to 1, if any,
/// sits at the first faulty spike.
pub fn latent_spike_timing(s_tilde: &[u8]) -> Vec<u32> {
    (0..s_tilde.len())
        .map(|t| {
            (0..=t)
                .map(|k| s_tilde[k] as u32 * (t - k + 1) as u32)
                .sum()
        })
        .collect()
}

/// Keeps only the first spike: `z == 1`.
pub fn first_spike_only(z: &[u32]) -> Vec<u8> {
    z.iter().map(|&x| (x == 1) as u8).collect()
}

/// Input current of every neuron over one Block, time-major `[t][n]`.
///
/// Feedforward drive comes from the same Block of the previous layer and
/// recurrent drive from the previous Block of this layer, which gives every
/// recurrent connection a delay of exactly `arp` steps. Steps that still fall
/// inside the refractory period of a spike in the previous Block are zeroed,
/// as is the first step after a spike on the previous Block's last step (the
/// membrane reset, which the refractory mask already covers unless `arp = 1`).
pub fn block_input_current<F: Real>(
    kernel: &LayerKernel<F>,
    ff: Drive<'_, F>,
    state: &BlockState<F>,
) -> Result<Vec<F>> {
    let (n, k) = (kernel.n_out(), kernel.arp);
    let ff_len = match ff {
        Drive::Spikes(x) => x.len(),
        Drive::Current(x) => x.len(),
    };
    if ff_len != k * kernel.n_in() || state.neurons() != n || state.arp() != k {
        return invalid_arg(format!(
            "block_input_current: drive has {ff_len} values, expected {} x {}",
            k,
            kernel.n_in()
        ));
    }
    let spiked = state.prev_spiked();
    // latent timings of the previous Block: zero before its spike
    let prev_z = |t: usize, i: usize| (t as u32 >= state.prev_first[i]) as u32;
    let mut out = vec![F::zero(); k * n];
    for t in 0..k {
        let row = &mut out[t * n..(t + 1) * n];
        kernel.current(ff.step(kernel.n_in(), t), Some(&state.prev_s[t * n..(t + 1) * n]), row);
        for i in 0..n {
            let masked = prev_z(t, i) < spiked[i] as u32;
            let reset = t == 0 && state.prev_s[(k - 1) * n + i] != 0;
            if masked || reset {
                row[i] = F::zero();
            }
        }
    }
    Ok(out)
}

/// Initial membrane of the next Block: zero after a spike, else the last value.
pub fn carry_membrane<F: Real>(spiked: bool, v_end: F) -> F {
    if spiked {
        F::zero()
    } else {
        v_end
    }
}

/// Initial adaptation of the next Block from this Block's latent timings.
///
/// Without a spike the adaptation just decays, `p^T_R a0`. With one, the
/// value at the spike `a_s = p^k a0` gains `1/p` and decays over the
/// `m = #(z > 1)` remaining steps.
pub fn carry_adaptation<F: Real>(a0: F, p: F, z: &[u32]) -> Result<F> {
    let k = z.len() as i32;
    let a = |t: i32| p.powi(t) * a0;
    match z.iter().position(|&x| x == 1) {
        None => Ok(a(k)),
        Some(_) if p == F::zero() => invalid_arg("adaptation carry after a spike is undefined for p = 0"),
        Some(pos) => {
            let m = z.iter().filter(|&&x| x > 1).count() as i32;
            let a_s = a(pos as i32 + 1);
            Ok(p.powi(m) * (a_s + p.recip()))
        }
    }
}
