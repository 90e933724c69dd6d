use ndarray::{Array3, ArrayView3};

use crate::error::{invalid_arg, Result};
use crate::real::Real;

/// Dense binary spike record indexed `(batch, neuron, time)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    batch: usize,
    neurons: usize,
    steps: usize,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(batch: usize, neurons: usize, steps: usize) -> Self {
        Self {
            batch,
            neurons,
            steps,
            data: vec![0; batch * neurons * steps],
        }
    }

    /// Builds a tensor from `(b, n, t)` row-major values, each 0 or 1.
    pub fn from_vec(batch: usize, neurons: usize, steps: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != batch * neurons * steps {
            return invalid_arg(format!(
                "spike data has {} values, dims ({batch}, {neurons}, {steps}) need {}",
                data.len(),
                batch * neurons * steps
            ));
        }
        if let Some(pos) = data.iter().position(|&x| x > 1) {
            return invalid_arg(format!("non-binary spike value {} at flat index {pos}", data[pos]));
        }
        Ok(Self {
            batch,
            neurons,
            steps,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.neurons, self.steps)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn index(&self, b: usize, n: usize, t: usize) -> usize {
        debug_assert!(b < self.batch && n < self.neurons && t < self.steps);
        (b * self.neurons + n) * self.steps + t
    }

    #[inline]
    pub fn get(&self, b: usize, n: usize, t: usize) -> bool {
        self.data[self.index(b, n, t)] != 0
    }

    #[inline]
    pub fn set(&mut self, b: usize, n: usize, t: usize, spike: bool) {
        let i = self.index(b, n, t);
        self.data[i] = spike as u8;
    }

    /// Spike train of one neuron.
    pub fn train(&self, b: usize, n: usize) -> &[u8] {
        let start = self.index(b, n, 0);
        &self.data[start..start + self.steps]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&x| x as usize).sum()
    }

    /// Copies batch row `b` into a time-major `[t][n]` buffer of `padded_steps` rows.
    pub(crate) fn time_major_row(&self, b: usize, padded_steps: usize) -> Vec<u8> {
        let mut out = vec![0u8; padded_steps * self.neurons];
        for n in 0..self.neurons {
            for (t, &s) in self.train(b, n).iter().enumerate() {
                out[t * self.neurons + n] = s;
            }
        }
        out
    }

    /// Inverse of [`SpikeTensor::time_major_row`], truncating to `steps`.
    pub(crate) fn from_time_major_rows(rows: &[Vec<u8>], neurons: usize, steps: usize) -> Self {
        let mut out = Self::zeros(rows.len(), neurons, steps);
        for (b, row) in rows.iter().enumerate() {
            for t in 0..steps {
                for n in 0..neurons {
                    let s = row[t * neurons + n];
                    if s != 0 {
                        let i = out.index(b, n, t);
                        out.data[i] = 1;
                    }
                }
            }
        }
        out
    }

    /// Selects batch rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let row_len = self.neurons * self.steps;
        let mut data = Vec::with_capacity(rows.len() * row_len);
        for &b in rows {
            data.extend_from_slice(&self.data[b * row_len..(b + 1) * row_len]);
        }
        Self {
            batch: rows.len(),
            neurons: self.neurons,
            steps: self.steps,
            data,
        }
    }

    /// Stacks single- or multi-row tensors with matching `(N, T)` along the batch axis.
    pub fn concat(parts: &[&SpikeTensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return invalid_arg("cannot concatenate zero spike tensors");
        };
        let (n, t) = (first.neurons, first.steps);
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if p.neurons != n || p.steps != t {
                return invalid_arg(format!(
                    "spike tensor dims (_, {}, {}) do not match (_, {n}, {t})",
                    p.neurons, p.steps
                ));
            }
            batch += p.batch;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            batch,
            neurons: n,
            steps: t,
            data,
        })
    }

    pub fn to_real<F: Real>(&self) -> Array3<F> {
        Array3::from_shape_fn((self.batch, self.neurons, self.steps), |(b, n, t)| {
            if self.get(b, n, t) {
                F::one()
            } else {
                F::zero()
            }
        })
    }
}

/// What drives the first layer: binary spikes or an injected analog current.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, F> {
    Spikes(&'a SpikeTensor),
    /// Injected current with dims `(batch, inputs, time)`.
    Current(ArrayView3<'a, F>),
}

impl<'a, F: Real> Input<'a, F> {
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            Input::Spikes(s) => s.dims(),
            Input::Current(c) => c.dim(),
        }
    }

    pub(crate) fn time_major_rows(&self, padded_steps: usize) -> Vec<RowInput<F>> {
        let (batch, n_in, steps) = self.dims();
        (0..batch)
            .map(|b| match self {
                Input::Spikes(s) => RowInput::Spikes(s.time_major_row(b, padded_steps)),
                Input::Current(c) => {
                    let mut out = vec![F::zero(); padded_steps * n_in];
                    for n in 0..n_in {
                        for t in 0..steps {
                            out[t * n_in + n] = c[[b, n, t]];
                        }
                    }
                    RowInput::Current(out)
                }
            })
            .collect()
    }
}

/// One batch row of first-layer drive in time-major `[t][n]` layout.
#[derive(Debug, Clone)]
pub(crate) enum RowInput<F> {
    Spikes(Vec<u8>),
    Current(Vec<F>),
}

/// Presynaptic drive for one batch row: binary spikes or analog current,
/// time-major when it spans several steps.
#[derive(Debug, Clone, Copy)]
pub enum Drive<'a, F> {
    Spikes(&'a [u8]),
    Current(&'a [F]),
}

impl<F> RowInput<F> {
    pub(crate) fn slice(&self, width: usize, start: usize, len: usize) -> Drive<'_, F> {
        match self {
            RowInput::Spikes(v) => Drive::Spikes(&v[start * width..(start + len) * width]),
            RowInput::Current(v) => Drive::Current(&v[start * width..(start + len) * width]),
        }
    }
}

impl<'a, F: Copy> Drive<'a, F> {
    pub(crate) fn step(&self, width: usize, t: usize) -> Drive<'a, F> {
        match *self {
            Drive::Spikes(v) => Drive::Spikes(&v[t * width..(t + 1) * width]),
            Drive::Current(v) => Drive::Current(&v[t * width..(t + 1) * width]),
        }
    }
}
