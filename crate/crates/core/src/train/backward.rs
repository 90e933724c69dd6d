//! Reverse-mode gradients through a recorded rollout.
//!
//! Spike nonlinearities contribute the surrogate derivative at their margin
//! `V - theta`. Refractory gates, latent timings, first-spike selection masks
//! and the Block carry case selectors are constants. Under the detached
//! policy spikes reach the loss only through feedforward connections; the
//! attached policy also differentiates recurrent inputs, and in the standard
//! engine the reset and adaptation terms as well.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::engine::latent_in_place;
use crate::error::{Error, Result};
use crate::kernel::LayerKernel;
use crate::params::{LayerParams, Network};
use crate::real::Real;
use crate::scan::suffix_decay;
use crate::sim::{Engine, LayerTape, ReadoutTape, Tape};
use crate::spikes::{Drive, RowInput};
use crate::train::surrogate::SurrogateKind;

/// Which spike-dependent paths carry gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetachPolicy {
    Attached,
    #[default]
    Detached,
}

impl std::str::FromStr for DetachPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "on" | "detached" => Ok(DetachPolicy::Detached),
            "off" | "attached" => Ok(DetachPolicy::Attached),
            other => Err(format!("unknown detach policy `{other}` (expected on or off)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GradConfig {
    pub surrogate: SurrogateKind,
    pub detach: DetachPolicy,
}

/// Loss gradient with respect to the rollout outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputGrad<F> {
    /// Gradient of the readout sums, `(batch, classes)`.
    pub readout: Option<Array2<F>>,
    /// Gradient of the last hidden layer's spikes, `(batch, neurons, time)`.
    pub spikes: Option<Array3<F>>,
}

/// Gradient accumulator with weights kept transposed like [`LayerKernel`].
#[derive(Debug, Clone)]
struct Acc<F> {
    beta: Vec<F>,
    p: Vec<F>,
    d: Vec<F>,
    b: Vec<F>,
    wt: Vec<F>,
    rt: Option<Vec<F>>,
}

impl<F: Real> Acc<F> {
    fn zeros(k: &LayerKernel<F>) -> Self {
        let n = k.n_out();
        let adapt = if k.readout { 0 } else { n };
        Self {
            beta: vec![F::zero(); n],
            p: vec![F::zero(); adapt],
            d: vec![F::zero(); adapt],
            b: vec![F::zero(); n],
            wt: vec![F::zero(); k.n_in() * n],
            rt: k.rt.as_ref().map(|r| vec![F::zero(); r.len()]),
        }
    }

    fn add(&mut self, other: &Acc<F>) {
        let pairs: [(&mut Vec<F>, &Vec<F>); 5] = [
            (&mut self.beta, &other.beta),
            (&mut self.p, &other.p),
            (&mut self.d, &other.d),
            (&mut self.b, &other.b),
            (&mut self.wt, &other.wt),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        if let (Some(a), Some(b)) = (self.rt.as_mut(), other.rt.as_ref()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    fn into_params(self, n_in: usize) -> LayerParams<F> {
        let n = self.b.len();
        let untranspose = |wt: &[F], cols: usize| Array2::from_shape_fn((n, cols), |(i, j)| wt[j * n + i]);
        LayerParams {
            w_ff: untranspose(&self.wt, n_in),
            w_rec: self.rt.as_ref().map(|r| untranspose(r, n)),
            beta: self.beta,
            p: self.p,
            d: self.d,
            b: self.b,
        }
    }

    /// `b`, feedforward and recurrent weight gradients of one step.
    fn synapses(&mut self, drive: Drive<'_, F>, rec: Option<&[u8]>, di: &[F]) {
        let n = di.len();
        self.b.iter_mut().zip(di).for_each(|(x, &g)| *x += g);
        match drive {
            Drive::Spikes(x) => {
                for (j, &s) in x.iter().enumerate() {
                    if s != 0 {
                        self.wt[j * n..(j + 1) * n].iter_mut().zip(di).for_each(|(w, &g)| *w += g);
                    }
                }
            }
            Drive::Current(x) => {
                for (j, &c) in x.iter().enumerate() {
                    if c != F::zero() {
                        self.wt[j * n..(j + 1) * n].iter_mut().zip(di).for_each(|(w, &g)| *w += c * g);
                    }
                }
            }
        }
        if let (Some(rt), Some(s)) = (self.rt.as_mut(), rec) {
            for (j, &x) in s.iter().enumerate() {
                if x != 0 {
                    rt[j * n..(j + 1) * n].iter_mut().zip(di).for_each(|(w, &g)| *w += g);
                }
            }
        }
    }
}

/// `dst (rows x n_in) += di (rows x n_out) * wt^T`, with `wt` stored `(n_in, n_out)`.
fn back_project<F: Real>(di: &[F], n_out: usize, wt: &[F], dst: &mut [F]) {
    let rows = di.len() / n_out;
    let n_in = wt.len() / n_out;
    let a = ArrayView2::from_shape((rows, n_out), di).expect("shape");
    let w = ArrayView2::from_shape((n_in, n_out), wt).expect("shape");
    let mut c = ArrayViewMut2::from_shape((rows, n_in), dst).expect("shape");
    general_mat_mul(F::one(), &a, &w.t(), F::one(), &mut c);
}

fn drive_at<'a, F: Real>(
    l: usize,
    input: &'a RowInput<F>,
    layers: &'a [LayerTape<F>],
    n_in: usize,
    t: usize,
    len: usize,
) -> Drive<'a, F> {
    if l == 0 {
        input.slice(n_in, t, len)
    } else {
        Drive::Spikes(&layers[l - 1].spikes[t * n_in..(t + len) * n_in])
    }
}

fn zeros_like<F: Real>(net: &Network<F>) -> Network<F> {
    let z = |l: &LayerParams<F>| LayerParams {
        beta: vec![F::zero(); l.beta.len()],
        p: vec![F::zero(); l.p.len()],
        d: vec![F::zero(); l.d.len()],
        b: vec![F::zero(); l.b.len()],
        w_ff: Array2::zeros(l.w_ff.dim()),
        w_rec: l.w_rec.as_ref().map(|w| Array2::zeros(w.dim())),
    };
    Network {
        config: net.config.clone(),
        layers: net.layers.iter().map(z).collect(),
        readout: net.readout.as_ref().map(z),
    }
}

const ROWS_PER_CHUNK: usize = 4;

/// Gradients of the loss with respect to every parameter of `net`, given the
/// tape of a rollout of the same network and the loss gradient at its outputs.
/// Rows are reduced in a fixed order, so results do not depend on the number
/// of worker threads.
pub fn backward<F: Real>(
    net: &Network<F>,
    tape: &Tape<F>,
    out: &OutputGrad<F>,
    cfg: &GradConfig,
) -> Result<Network<F>> {
    let batch = tape.rows.len();
    if tape.rows.iter().any(|r| r.layers.len() != net.layers.len())
        || tape.rows.iter().any(|r| r.readout.is_some() != net.readout.is_some())
    {
        return Err(Error::InvalidState("tape was recorded for a different network".into()));
    }
    if tape.rows.iter().any(|r| r.layers.iter().any(|l| l.cur.is_empty())) {
        return Err(Error::InvalidState("rollout was recorded without a gradient tape".into()));
    }
    if let Some(g) = &out.readout {
        if net.readout.is_none() || g.dim() != (batch, net.config.n_classes) {
            return Err(Error::InvalidArgument(format!("readout gradient has dims {:?}", g.dim())));
        }
    }
    if let Some(g) = &out.spikes {
        let want = (batch, net.output_width(), tape.steps);
        if net.layers.is_empty() || g.dim() != want {
            return Err(Error::InvalidArgument(format!(
                "spike gradient has dims {:?}, expected {want:?}",
                g.dim()
            )));
        }
    }
    let arp = tape.arp;
    let kernels: Vec<LayerKernel<F>> = net
        .layers
        .iter()
        .map(|l| LayerKernel::new(l, arp))
        .collect::<Result<_>>()?;
    let ro_kernel = net.readout.as_ref().map(|l| LayerKernel::new(l, arp)).transpose()?;

    let rows: Vec<usize> = (0..batch).collect();
    let partials: Vec<(Vec<Acc<F>>, Option<Acc<F>>)> = rows
        .par_chunks(ROWS_PER_CHUNK)
        .map(|chunk| {
            let mut accs: Vec<Acc<F>> = kernels.iter().map(Acc::zeros).collect();
            let mut ro_acc = ro_kernel.as_ref().map(Acc::zeros);
            for &b in chunk {
                row_backward(tape, b, &kernels, ro_kernel.as_ref(), out, cfg, &mut accs, ro_acc.as_mut());
            }
            (accs, ro_acc)
        })
        .collect();
    let mut iter = partials.into_iter();
    let Some((mut accs, mut ro_acc)) = iter.next() else {
        return Ok(zeros_like(net));
    };
    for (a, r) in iter {
        accs.iter_mut().zip(&a).for_each(|(x, y)| x.add(y));
        if let (Some(x), Some(y)) = (ro_acc.as_mut(), r.as_ref()) {
            x.add(y);
        }
    }
    Ok(Network {
        config: net.config.clone(),
        layers: accs
            .into_iter()
            .zip(&kernels)
            .map(|(a, k)| a.into_params(k.n_in()))
            .collect(),
        readout: ro_acc.zip(ro_kernel.as_ref()).map(|(a, k)| a.into_params(k.n_in())),
    })
}

#[allow(clippy::too_many_arguments)]
fn row_backward<F: Real>(
    tape: &Tape<F>,
    b: usize,
    kernels: &[LayerKernel<F>],
    ro_kernel: Option<&LayerKernel<F>>,
    out: &OutputGrad<F>,
    cfg: &GradConfig,
    accs: &mut [Acc<F>],
    ro_acc: Option<&mut Acc<F>>,
) {
    let row = &tape.rows[b];
    let input = &tape.inputs[b];
    let (padded, steps) = (tape.padded, tape.steps);
    let n_layers = kernels.len();
    let top_width = kernels.last().map(|k| k.n_out());
    let mut ds: Option<Vec<F>> = top_width.map(|w| vec![F::zero(); padded * w]);
    if let (Some(g), Some(ds), Some(w)) = (&out.spikes, ds.as_mut(), top_width) {
        for n in 0..w {
            for t in 0..steps {
                ds[t * w + n] = g[[b, n, t]];
            }
        }
    }
    if let (Some(k), Some(acc), Some(rt), Some(g)) = (ro_kernel, ro_acc, row.readout.as_ref(), &out.readout) {
        let grad: Vec<F> = g.row(b).to_vec();
        let n_in = k.n_in();
        match tape.engine {
            Engine::Standard => readout_standard(k, rt, &grad, tape, acc, ds.as_deref_mut(), |t| {
                drive_at(n_layers, input, &row.layers, n_in, t, 1)
            }),
            Engine::Block => readout_block(k, rt, &grad, tape, acc, ds.as_deref_mut(), |t, len| {
                drive_at(n_layers, input, &row.layers, n_in, t, len)
            }),
        }
    }
    let Some(mut ds) = ds else { return };
    for l in (0..n_layers).rev() {
        let k = &kernels[l];
        let mut dx = (l > 0).then(|| vec![F::zero(); padded * k.n_in()]);
        let drive = |t: usize, len: usize| drive_at(l, input, &row.layers, k.n_in(), t, len);
        match tape.engine {
            Engine::Standard => {
                layer_standard(k, &row.layers[l], &mut ds, dx.as_deref_mut(), tape, cfg, &mut accs[l], drive)
            }
            Engine::Block => layer_block(k, &row.layers[l], &mut ds, dx.as_deref_mut(), tape, cfg, &mut accs[l], drive),
        }
        match dx {
            Some(next) => ds = next,
            None => break,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_standard<'a, F: Real>(
    k: &LayerKernel<F>,
    lt: &LayerTape<F>,
    ds: &mut [F],
    mut dx: Option<&mut [F]>,
    tape: &Tape<F>,
    cfg: &GradConfig,
    acc: &mut Acc<F>,
    drive: impl Fn(usize, usize) -> Drive<'a, F>,
) {
    let (n, arp) = (k.n_out(), k.arp);
    let attached = cfg.detach == DetachPolicy::Attached;
    let mut dv = vec![F::zero(); n];
    let mut da = vec![F::zero(); n];
    let mut di = vec![F::zero(); n];
    for t in (0..tape.padded).rev() {
        for i in 0..n {
            let idx = t * n + i;
            let (s_prev, v_prev, a_prev) = if t > 0 {
                (lt.spikes[idx - n] != 0, lt.v[idx - n], lt.a[idx - n])
            } else {
                (false, tape.v_init, tape.a_init)
            };
            let a_t = lt.a[idx];
            let gs = ds[idx];
            let g = if gs != F::zero() {
                let x = lt.v[idx] - (F::one() + k.d[i] * a_t);
                gs * F::of(cfg.surrogate.derivative(x.as_f64()))
            } else {
                F::zero()
            };
            let d_v = dv[i] + g;
            let d_theta = -g;
            let d_a = da[i] + k.d[i] * d_theta;
            acc.d[i] += a_t * d_theta;
            acc.p[i] += a_prev * d_a;
            da[i] = k.p[i] * d_a;
            if attached && t > 0 {
                ds[idx - n] += d_a;
            }
            let inp = lt.cur[idx];
            if s_prev {
                di[i] = F::zero();
                dv[i] = F::zero();
                if attached {
                    ds[idx - n] -= (k.beta[i] * v_prev + k.one_minus_beta[i] * inp) * d_v;
                }
            } else {
                acc.beta[i] += (v_prev - inp) * d_v;
                di[i] = if lt.gate[idx] != 0 { k.one_minus_beta[i] * d_v } else { F::zero() };
                dv[i] = k.beta[i] * d_v;
            }
        }
        let rec = (t >= arp).then(|| &lt.spikes[(t - arp) * n..(t - arp + 1) * n]);
        acc.synapses(drive(t, 1), rec, &di);
        if let Some(dx) = dx.as_deref_mut() {
            let w = k.n_in();
            back_project(&di, n, &k.wt, &mut dx[t * w..(t + 1) * w]);
        }
        if attached && t >= arp {
            if let Some(rt) = &k.rt {
                back_project(&di, n, rt, &mut ds[(t - arp) * n..(t - arp + 1) * n]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_block<'a, F: Real>(
    k: &LayerKernel<F>,
    lt: &LayerTape<F>,
    ds: &mut [F],
    mut dx: Option<&mut [F]>,
    tape: &Tape<F>,
    cfg: &GradConfig,
    acc: &mut Acc<F>,
    drive: impl Fn(usize, usize) -> Drive<'a, F>,
) {
    let (n, kk) = (k.n_out(), k.arp);
    let len = kk * n;
    let blocks = tape.padded / kk;
    let attached = cfg.detach == DetachPolicy::Attached;
    let mut dv0_next = vec![F::zero(); n];
    let mut da0_next = vec![F::zero(); n];
    let mut dv0 = vec![F::zero(); n];
    let mut da0 = vec![F::zero(); n];
    let mut margin = vec![F::zero(); len];
    let mut z = vec![0u32; len];
    let mut margin_prev = vec![F::zero(); len];
    let mut z_prev = vec![0u32; len];
    let mut count = vec![0u32; n];
    let mut lam = vec![F::zero(); len];
    let mut spiked_prev = vec![0u8; n];
    let latent = |nb: usize, margin: &mut [F], z: &mut [u32], count: &mut [u32]| {
        latent_in_place(
            k,
            &lt.v[nb * len..(nb + 1) * len],
            &lt.a0[nb * n..(nb + 1) * n],
            margin,
            z,
            count,
        )
    };
    latent(blocks - 1, &mut margin, &mut z, &mut count);
    for nb in (0..blocks).rev() {
        let base = nb * len;
        let vt = &lt.v[base..base + len];
        let cur = &lt.cur[base..base + len];
        let v0 = &lt.v0[nb * n..(nb + 1) * n];
        let a0 = &lt.a0[nb * n..(nb + 1) * n];
        let prev_s = (nb > 0).then(|| &lt.spikes[base - len..base]);
        if nb > 0 {
            latent(nb - 1, &mut margin_prev, &mut z_prev, &mut count);
        }
        spiked_prev.iter_mut().for_each(|x| *x = 0);
        if let Some(ps) = prev_s {
            for row in ps.chunks_exact(n) {
                spiked_prev.iter_mut().zip(row).for_each(|(o, &s)| *o |= s);
            }
        }

        // reset-free membrane adjoint from spikes, threshold and carry
        da0.iter_mut().for_each(|x| *x = F::zero());
        for t in 0..kk {
            let s = t as i32 + 1;
            for i in 0..n {
                let idx = t * n + i;
                let gs = ds[base + idx];
                let mut g = F::zero();
                if gs != F::zero() && z[idx] <= 1 {
                    g = gs * F::of(cfg.surrogate.derivative(margin[idx].as_f64()));
                }
                lam[idx] = g;
                if g != F::zero() {
                    let d_theta = -g;
                    let ps = k.p_pow[idx];
                    let ps1 = if s == 1 { F::one() } else { k.p_pow[idx - n] };
                    acc.d[i] += d_theta * ps * a0[i];
                    da0[i] += d_theta * k.d[i] * ps;
                    acc.p[i] += d_theta * k.d[i] * F::of(s as f64) * ps1 * a0[i];
                }
            }
        }
        let last = (kk - 1) * n;
        for i in 0..n {
            let mut m = 0u32;
            let mut spiked = false;
            for t in 0..kk {
                let zz = z[t * n + i];
                spiked |= zz == 1;
                m += (zz > 1) as u32;
            }
            if !spiked {
                lam[last + i] += dv0_next[i];
            }
            let g = da0_next[i];
            if g != F::zero() {
                let p = k.p[i];
                let pk1 = if kk == 1 { F::one() } else { k.p_pow[last - n + i] };
                let mut dp = F::of(kk as f64) * pk1 * a0[i];
                if spiked && m != 1 && p != F::zero() {
                    dp += F::of(m as f64 - 1.0) * p.powi(m as i32 - 2);
                }
                acc.p[i] += g * dp;
                da0[i] += g * k.p_pow[last + i];
            }
        }
        suffix_decay(&mut lam, &k.beta, n);
        for i in 0..n {
            dv0[i] = k.beta[i] * lam[i];
        }
        for t in 0..kk {
            for i in 0..n {
                let idx = t * n + i;
                let prev = if t == 0 { v0[i] } else { vt[idx - n] };
                acc.beta[i] += lam[idx] * (prev - cur[idx]);
                let masked = z_prev[idx] < spiked_prev[i] as u32
                    || (t == 0 && prev_s.is_some_and(|ps| ps[last + i] != 0));
                // lam now holds the adjoint of the gated input current
                lam[idx] = if masked {
                    F::zero()
                } else {
                    k.one_minus_beta[i] * lam[idx]
                };
            }
        }
        for t in 0..kk {
            acc.synapses(drive(nb * kk + t, 1), prev_s.map(|ps| &ps[t * n..(t + 1) * n]), &lam[t * n..(t + 1) * n]);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let w = k.n_in();
            back_project(&lam, n, &k.wt, &mut dx[nb * kk * w..(nb + 1) * kk * w]);
        }
        if attached && nb > 0 {
            if let Some(rt) = &k.rt {
                back_project(&lam, n, rt, &mut ds[base - len..base]);
            }
        }
        std::mem::swap(&mut dv0_next, &mut dv0);
        std::mem::swap(&mut da0_next, &mut da0);
        std::mem::swap(&mut margin, &mut margin_prev);
        std::mem::swap(&mut z, &mut z_prev);
        z_prev.iter_mut().for_each(|x| *x = 0);
    }
}

fn readout_standard<'a, F: Real>(
    k: &LayerKernel<F>,
    rt: &ReadoutTape<F>,
    grad: &[F],
    tape: &Tape<F>,
    acc: &mut Acc<F>,
    mut dx: Option<&mut [F]>,
    drive: impl Fn(usize) -> Drive<'a, F>,
) {
    let c = k.n_out();
    let mut lam = vec![F::zero(); c];
    let mut di = vec![F::zero(); c];
    for t in (0..tape.padded).rev() {
        for i in 0..c {
            let du = if t < tape.steps { grad[i] } else { F::zero() };
            lam[i] = du + k.beta[i] * lam[i];
            let prev = if t > 0 { rt.u[(t - 1) * c + i] } else { tape.v_init };
            acc.beta[i] += lam[i] * (prev - rt.cur[t * c + i]);
            di[i] = k.one_minus_beta[i] * lam[i];
        }
        acc.synapses(drive(t), None, &di);
        if let Some(dx) = dx.as_deref_mut() {
            let w = k.n_in();
            back_project(&di, c, &k.wt, &mut dx[t * w..(t + 1) * w]);
        }
    }
}

fn readout_block<'a, F: Real>(
    k: &LayerKernel<F>,
    rt: &ReadoutTape<F>,
    grad: &[F],
    tape: &Tape<F>,
    acc: &mut Acc<F>,
    mut dx: Option<&mut [F]>,
    drive: impl Fn(usize, usize) -> Drive<'a, F>,
) {
    let (c, kk) = (k.n_out(), k.arp);
    let len = kk * c;
    let blocks = tape.padded / kk;
    let mut lam = vec![F::zero(); len];
    let mut carry = vec![F::zero(); c];
    for nb in (0..blocks).rev() {
        let base = nb * len;
        for t in 0..kk {
            let valid = nb * kk + t < tape.steps;
            for i in 0..c {
                lam[t * c + i] = if valid { grad[i] } else { F::zero() };
            }
        }
        for i in 0..c {
            lam[len - c + i] += carry[i];
        }
        suffix_decay(&mut lam, &k.beta, c);
        for i in 0..c {
            carry[i] = k.beta[i] * lam[i];
        }
        for t in 0..kk {
            for i in 0..c {
                let idx = t * c + i;
                let prev = if base + idx >= c { rt.u[base + idx - c] } else { tape.v_init };
                acc.beta[i] += lam[idx] * (prev - rt.cur[base + idx]);
                lam[idx] = k.one_minus_beta[i] * lam[idx];
            }
        }
        for t in 0..kk {
            acc.synapses(drive(nb * kk + t, 1), None, &lam[t * c..(t + 1) * c]);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let w = k.n_in();
            back_project(&lam, c, &k.wt, &mut dx[nb * kk * w..(nb + 1) * kk * w]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::NetConfig;
    use crate::sim::{simulate_with_tape, SimConfig};
    use crate::spikes::{Input, SpikeTensor};
    use crate::Precision;

    fn single(arp: usize, w: f64) -> Network<f64> {
        let mut config = NetConfig::new(1, vec![1], 0, 1.0, arp);
        config.precision = Precision::F64;
        config.recurrent = false;
        let mut l = LayerParams::<f64>::zeros(1, 1, false, false);
        l.beta = vec![0.5];
        l.p = vec![0.5];
        l.d = vec![0.0];
        l.w_ff[[0, 0]] = w;
        Network {
            config,
            layers: vec![l],
            readout: None,
        }
    }

    fn grads(net: &Network<f64>, input: &SpikeTensor, engine: Engine, g: Array3<f64>, cfg: GradConfig) -> Network<f64> {
        let (_, tape) = simulate_with_tape(net, Input::Spikes(input), &SimConfig::new(engine)).unwrap();
        let out = OutputGrad {
            readout: None,
            spikes: Some(g),
        };
        backward(net, &tape, &out, &cfg).unwrap()
    }

    #[test]
    fn hand_unrolled_three_steps() {
        // V = 0.6, 0.9, 1.05: one spike on the last step, margin 0.05
        let input = SpikeTensor::from_vec(1, 1, 3, vec![1, 1, 1]).unwrap();
        let g = Array3::from_shape_vec((1, 1, 3), vec![0.0, 0.0, 1.0]).unwrap();
        let cfg = GradConfig {
            surrogate: SurrogateKind::Boxcar,
            detach: DetachPolicy::Detached,
        };
        for (engine, arp) in [(Engine::Standard, 1), (Engine::Block, 1), (Engine::Block, 3), (Engine::Standard, 3)] {
            let gr = grads(&single(arp, 1.2), &input, engine, g.clone(), cfg);
            let l = &gr.layers[0];
            // dV2/dw = (1 - beta)(1 + beta + beta^2), times the boxcar height
            assert!((l.w_ff[[0, 0]] - 0.4375).abs() < 1e-12, "{engine} {arp}: {}", l.w_ff[[0, 0]]);
            assert!((l.b[0] - 0.4375).abs() < 1e-12);
            // dV2/dbeta = V1 - I + beta (V0 - I + beta (0 - I)) = -0.9
            assert!((l.beta[0] + 0.45).abs() < 1e-12, "{}", l.beta[0]);
        }
    }

    #[test]
    fn zero_gradient_in_gives_zero_out() {
        let input = SpikeTensor::from_vec(1, 1, 5, vec![1, 0, 1, 1, 0]).unwrap();
        for engine in [Engine::Standard, Engine::Block] {
            let gr = grads(&single(2, 3.0), &input, engine, Array3::zeros((1, 1, 5)), GradConfig::default());
            assert_eq!(gr, zeros_like(&gr));
        }
    }

    #[test]
    fn attached_adds_spike_paths() {
        let input = SpikeTensor::from_vec(1, 1, 8, vec![1, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        let g = Array3::from_elem((1, 1, 8), 1.0);
        for engine in [Engine::Standard, Engine::Block] {
            let mut net = single(2, 3.0);
            net.config.recurrent = true;
            net.layers[0].d = vec![0.5];
            net.layers[0].w_rec = Some(Array2::from_elem((1, 1), 0.7));
            let det = grads(&net, &input, engine, g.clone(), GradConfig::default());
            let att = GradConfig {
                detach: DetachPolicy::Attached,
                ..GradConfig::default()
            };
            let att = grads(&net, &input, engine, g.clone(), att);
            assert!(att.layers[0].w_ff.iter().all(|x| x.is_finite()));
            assert_ne!(det, att, "{engine}");
        }
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let input = SpikeTensor::from_vec(1, 1, 4, vec![1; 4]).unwrap();
        let net = single(2, 3.0);
        let (_, tape) = simulate_with_tape(&net, Input::Spikes(&input), &SimConfig::new(Engine::Block)).unwrap();
        let mut other = net.clone();
        other.layers.push(other.layers[0].clone());
        let err = backward(&other, &tape, &OutputGrad::default(), &GradConfig::default());
        assert!(matches!(err, Err(Error::InvalidState(_))));
    }
}
