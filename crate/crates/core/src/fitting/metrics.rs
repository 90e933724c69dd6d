//! Spike-train distances and the explained temporal variance score.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VanRossumConfig {
    /// Time constant of the causal exponential kernel, in ms.
    pub tau_ms: f64,
}

impl Default for VanRossumConfig {
    fn default() -> Self {
        Self { tau_ms: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtvConfig {
    /// Width of the Gaussian smoothing kernel, in ms.
    pub sigma_ms: f64,
    /// The kernel is cut at this many widths on each side and renormalised.
    pub truncate: f64,
}

impl Default for EtvConfig {
    fn default() -> Self {
        Self {
            sigma_ms: 150.0,
            truncate: 4.0,
        }
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return invalid_arg(format!("{name} must be positive, got {x}"));
    }
    Ok(())
}

/// Causal exponential filter `f[t] = alpha f[t-1] + x[t]`, `alpha = exp(-dt/tau)`.
pub fn exp_filter(x: impl IntoIterator<Item = f64>, tau_ms: f64, dt_ms: f64) -> Vec<f64> {
    let alpha = (-dt_ms / tau_ms).exp();
    let mut acc = 0.0;
    x.into_iter()
        .map(|v| {
            acc = alpha * acc + v;
            acc
        })
        .collect()
}

fn filtered_error(x: &[u8], y: &[u8], cfg: &VanRossumConfig, dt_ms: f64) -> Result<Vec<f64>> {
    check_positive("tau_ms", cfg.tau_ms)?;
    check_positive("dt_ms", dt_ms)?;
    if x.len() != y.len() {
        return invalid_arg(format!("spike trains differ in length ({} vs {})", x.len(), y.len()));
    }
    let diff = x.iter().zip(y).map(|(&a, &b)| a as f64 - b as f64);
    Ok(exp_filter(diff, cfg.tau_ms, dt_ms))
}

/// `sqrt(dt/tau * sum_t (k*x - k*y)[t]^2)` with the causal exponential kernel.
pub fn van_rossum(x: &[u8], y: &[u8], cfg: &VanRossumConfig, dt_ms: f64) -> Result<f64> {
    let e = filtered_error(x, y, cfg, dt_ms)?;
    Ok((dt_ms / cfg.tau_ms * e.iter().map(|v| v * v).sum::<f64>()).sqrt())
}

/// Distance and its gradient with respect to each entry of `x`. The gradient
/// is zero where the distance is zero.
pub fn van_rossum_grad(x: &[u8], y: &[u8], cfg: &VanRossumConfig, dt_ms: f64) -> Result<(f64, Vec<f64>)> {
    let e = filtered_error(x, y, cfg, dt_ms)?;
    let scale = dt_ms / cfg.tau_ms;
    let dist = (scale * e.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if dist == 0.0 {
        return Ok((0.0, vec![0.0; x.len()]));
    }
    // dD/dx[s] = scale / D * sum_{t >= s} e[t] alpha^(t-s), a reverse filter
    let alpha = (-dt_ms / cfg.tau_ms).exp();
    let mut grad = vec![0.0; x.len()];
    let mut acc = 0.0;
    for t in (0..x.len()).rev() {
        acc = alpha * acc + e[t];
        grad[t] = scale * acc / dist;
    }
    Ok((dist, grad))
}

/// Truncated Gaussian kernel sampled every `dt_ms`, normalised to sum to one.
pub fn gaussian_kernel(cfg: &EtvConfig, dt_ms: f64) -> Result<Vec<f64>> {
    check_positive("sigma_ms", cfg.sigma_ms)?;
    check_positive("truncate", cfg.truncate)?;
    check_positive("dt_ms", dt_ms)?;
    let half = (cfg.truncate * cfg.sigma_ms / dt_ms).floor() as usize;
    let s = cfg.sigma_ms / dt_ms;
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let z = (i as f64 - half as f64) / s;
            (-0.5 * z * z).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Centred Gaussian smoothing of a spike train. Near the edges the kernel is
/// renormalised over the samples that exist, so a constant train stays
/// constant.
pub fn smooth(train: &[u8], kernel: &[f64]) -> Vec<f64> {
    let n = train.len();
    let half = kernel.len() / 2;
    let mut out = vec![0.0; n];
    // spikes are sparse, so scatter each one instead of convolving densely
    for s in train.iter().enumerate().filter(|(_, &x)| x != 0).map(|(s, _)| s) {
        let lo = s.saturating_sub(half);
        let hi = (s + half).min(n.saturating_sub(1));
        for (t, o) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *o += kernel[t + half - s];
        }
    }
    // mass of the kernel that lands inside the train, per output sample
    let mut cum = Vec::with_capacity(kernel.len() + 1);
    cum.push(0.0);
    for &k in kernel {
        cum.push(cum.last().unwrap() + k);
    }
    for (t, o) in out.iter_mut().enumerate() {
        let left = t.min(half);
        let right = (n - 1 - t).min(half);
        let mass = cum[half + right + 1] - cum[half - left];
        *o /= mass;
    }
    out
}

fn variance(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = x.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    x.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// `(var a + var b - var(a - b)) / (var a + var b)`, or `None` for 0/0.
fn explained(a: &[f64], b: &[f64]) -> Option<f64> {
    let (va, vb) = (variance(a.iter().copied()), variance(b.iter().copied()));
    let vd = variance(a.iter().zip(b).map(|(x, y)| x - y));
    let den = va + vb;
    (den > 0.0).then(|| (den - vd) / den)
}

/// Explained temporal variance of a smoothed prediction against smoothed
/// repeats. Repeats whose ratio is 0/0 are skipped.
pub fn etv_traces(pred: &[f64], repeats: &[Vec<f64>]) -> Result<f64> {
    if repeats.len() < 2 {
        return invalid_arg(format!("ETV needs at least 2 repeats, got {}", repeats.len()));
    }
    if repeats.iter().any(|r| r.len() != pred.len()) {
        return invalid_arg("repeats and prediction differ in length");
    }
    let mut mean = vec![0.0; pred.len()];
    for r in repeats {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= repeats.len() as f64);
    let raw: f64 = repeats.iter().filter_map(|r| explained(pred, r)).sum();
    let max: f64 = repeats.iter().filter_map(|r| explained(&mean, r)).sum();
    if !(max > 0.0) {
        return Err(Error::InvalidData("repeats carry no explainable temporal variance".into()));
    }
    Ok(raw / max)
}

/// One stimulus presentation: the predicted train and the recorded repeats.
#[derive(Debug, Clone, Copy)]
pub struct EtvSegment<'a> {
    pub pred: &'a [u8],
    pub repeats: &'a [Vec<u8>],
}

/// ETV over several stimuli. Each is smoothed on its own and the traces are
/// concatenated in time.
pub fn etv(segments: &[EtvSegment<'_>], cfg: &EtvConfig, dt_ms: f64) -> Result<f64> {
    let kernel = gaussian_kernel(cfg, dt_ms)?;
    let Some(first) = segments.first() else {
        return invalid_arg("ETV needs at least one segment");
    };
    let reps = first.repeats.len();
    if segments.iter().any(|s| s.repeats.len() != reps) {
        return invalid_arg("every segment needs the same number of repeats");
    }
    let mut pred = Vec::new();
    let mut repeats = vec![Vec::new(); reps];
    for s in segments {
        if s.repeats.iter().any(|r| r.len() != s.pred.len()) {
            return invalid_arg("repeats and prediction differ in length");
        }
        pred.extend(smooth(s.pred, &kernel));
        for (dst, r) in repeats.iter_mut().zip(s.repeats) {
            dst.extend(smooth(r, &kernel));
        }
    }
    etv_traces(&pred, &repeats)
}
