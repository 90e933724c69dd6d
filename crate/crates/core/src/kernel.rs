//! Per-layer precomputed data shared by both engines: transposed weights for
//! the input-current kernel, and power tables for Block-local dynamics.

use crate::error::{invalid_arg, Result};
use crate::params::LayerParams;
use crate::real::Real;
use crate::spikes::Drive;

/// Layer parameters rearranged for simulation.
///
/// Weights are stored transposed, `wt[j * n_out + i] = w_ff[i][j]`, so that a
/// presynaptic event adds one contiguous row. Both engines build currents
/// through [`LayerKernel::current`], which fixes the summation order: bias,
/// then feedforward inputs by ascending index, then recurrent inputs by
/// ascending index.
#[derive(Debug, Clone)]
pub struct LayerKernel<F> {
    pub(crate) n_in: usize,
    pub(crate) n_out: usize,
    pub(crate) arp: usize,
    pub(crate) readout: bool,
    pub(crate) bias: Vec<F>,
    pub(crate) wt: Vec<F>,
    pub(crate) rt: Option<Vec<F>>,
    pub(crate) beta: Vec<F>,
    pub(crate) one_minus_beta: Vec<F>,
    pub(crate) p: Vec<F>,
    pub(crate) d: Vec<F>,
    /// `p^(t+1)` for block-local `t = 0..arp`, time-major.
    pub(crate) p_pow: Vec<F>,
    /// `d * p^(t+1)`, time-major.
    pub(crate) dp_pow: Vec<F>,
}

impl<F: Real> LayerKernel<F> {
    pub fn new(params: &LayerParams<F>, arp: usize) -> Result<Self> {
        params.validate()?;
        params.check_decays()?;
        if arp == 0 {
            return invalid_arg("arp_steps must be at least 1");
        }
        let (n_in, n_out) = (params.n_in(), params.n_out());
        let readout = params.p.is_empty();
        let wt = transpose(&params.w_ff);
        let rt = params.w_rec.as_ref().map(transpose);
        let pow_table = |base: &[F]| {
            let mut out = vec![F::zero(); arp * base.len()];
            for t in 0..arp {
                for (n, &x) in base.iter().enumerate() {
                    out[t * base.len() + n] = x.powi(t as i32 + 1);
                }
            }
            out
        };
        let p_pow = pow_table(&params.p);
        let dp_pow = p_pow
            .iter()
            .enumerate()
            .map(|(k, &x)| params.d[k % n_out] * x)
            .collect();
        Ok(Self {
            n_in,
            n_out,
            arp,
            readout,
            bias: params.b.clone(),
            wt,
            rt,
            one_minus_beta: params.beta.iter().map(|&b| F::one() - b).collect(),
            beta: params.beta.clone(),
            p: params.p.clone(),
            d: params.d.clone(),
            p_pow,
            dp_pow,
        })
    }

    /// The Block adaptation carry divides by `p`, so `p = 0` is only allowed
    /// where adaptation is switched off (`d = 0`).
    pub(crate) fn check_block_carry(&self) -> Result<()> {
        for (i, (&p, &d)) in self.p.iter().zip(&self.d).enumerate() {
            if p == F::zero() && d != F::zero() {
                return invalid_arg(format!(
                    "p[{i}] = 0 with d[{i}] = {d}: the Block adaptation carry needs 1/p"
                ));
            }
        }
        Ok(())
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Writes `b + W x + W_rec s` into `out`.
    pub(crate) fn current(&self, drive: Drive<'_, F>, rec: Option<&[u8]>, out: &mut [F]) {
        let n = self.n_out;
        out.copy_from_slice(&self.bias);
        match drive {
            Drive::Spikes(x) => {
                for (j, &s) in x.iter().enumerate() {
                    if s != 0 {
                        add_row(out, &self.wt[j * n..(j + 1) * n]);
                    }
                }
            }
            Drive::Current(x) => {
                for (j, &c) in x.iter().enumerate() {
                    if c != F::zero() {
                        axpy_row(out, c, &self.wt[j * n..(j + 1) * n]);
                    }
                }
            }
        }
        if let (Some(rt), Some(s)) = (&self.rt, rec) {
            for (j, &x) in s.iter().enumerate() {
                if x != 0 {
                    add_row(out, &rt[j * n..(j + 1) * n]);
                }
            }
        }
    }
}

fn transpose<F: Real>(w: &ndarray::Array2<F>) -> Vec<F> {
    let (rows, cols) = w.dim();
    let mut out = vec![F::zero(); rows * cols];
    for ((i, j), &x) in w.indexed_iter() {
        out[j * rows + i] = x;
    }
    out
}

#[inline]
pub(crate) fn add_row<F: Real>(out: &mut [F], row: &[F]) {
    for (o, &w) in out.iter_mut().zip(row) {
        *o += w;
    }
}

#[inline]
pub(crate) fn axpy_row<F: Real>(out: &mut [F], a: F, row: &[F]) {
    for (o, &w) in out.iter_mut().zip(row) {
        *o += a * w;
    }
}
