//! Linear scans over time-major `[t][n]` buffers.
//!
//! Time is walked in order while each step updates all neurons at once, so
//! the inner loops are straight-line and vectorize across neurons. This is
//! the work-efficient way to evaluate the Block convolutions on a CPU.

use crate::real::Real;

/// In place: `h[t] <- sum_{j>=t} c^(j-t) h[j]`.
pub(crate) fn suffix_decay<F: Real>(h: &mut [F], c: &[F], n: usize) {
    for t in (0..(h.len() / n).saturating_sub(1)).rev() {
        let (head, tail) = h.split_at_mut((t + 1) * n);
        for ((d, &s), &c) in head[t * n..].iter_mut().zip(&tail[..n]).zip(c) {
            *d += c * s;
        }
    }
}

/// In place inclusive prefix sum over time.
pub(crate) fn prefix_sum(z: &mut [u32], n: usize) {
    for t in 1..z.len() / n {
        let (done, rest) = z.split_at_mut(t * n);
        for (d, &s) in rest[..n].iter_mut().zip(&done[(t - 1) * n..]) {
            *d += s;
        }
    }
}
