//! Fitting a single ALIF neuron to recorded spike trains.
//!
//! The neuron is parametrised in unnormalised current form,
//! `V <- beta V + gain * I + bias` (gated and reset as usual), which is where
//! the initial input weight `s/100` is meaningful: with `s = dt / 0.1 ms` the
//! steady-state drive `gain / (1 - beta)` stays near 2 at every resolution.
//! The engines use `V <- beta V + (1 - beta) I~`, so each rollout maps
//! `w = gain / (1 - beta)` and `b = bias / (1 - beta)`, and the chain rule
//! carries those maps back in the reverse pass.

use std::time::Instant;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::fitting::metrics::{etv, van_rossum_grad, EtvConfig, EtvSegment, VanRossumConfig};
use crate::fitting::preprocess::Stimulus;
use crate::params::{ClampRanges, LayerParams, NetConfig, Network};
use crate::real::Precision;
use crate::sim::{simulate, simulate_with_tape, Engine, SimConfig};
use crate::spikes::Input;
use crate::train::{adam_step, backward, AdamConfig, AdamState, GradConfig, OutputGrad, SurrogateKind};

/// Resolution at which the initialisation scale `s` equals one.
pub const REFERENCE_DT_MS: f64 = 0.1;
pub const INIT_TAU_MEM_MS: f64 = 20.0;
pub const INIT_TAU_ADAPT_MS: f64 = 100.0;

/// Parameters of the fitted neuron in unnormalised current form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Weight of the injected current.
    pub gain: f64,
    pub bias: f64,
    pub beta: f64,
    pub p: f64,
    pub d: f64,
}

impl NeuronParams {
    /// Initial fit parameters at resolution `dt_ms`.
    pub fn init(dt_ms: f64) -> Self {
        let s = dt_ms / REFERENCE_DT_MS;
        Self {
            gain: s / 100.0,
            bias: 0.0,
            beta: (-dt_ms / INIT_TAU_MEM_MS).exp(),
            p: (-dt_ms / INIT_TAU_ADAPT_MS).exp(),
            d: 0.1 / s,
        }
    }

    pub fn tau_mem_ms(&self, dt_ms: f64) -> f64 {
        -dt_ms / self.beta.ln()
    }

    pub fn tau_adapt_ms(&self, dt_ms: f64) -> f64 {
        -dt_ms / self.p.ln()
    }

    /// One-neuron network driven by a single current channel.
    pub fn to_network(&self, dt_ms: f64, arp_steps: usize, clamp: ClampRanges) -> Result<Network<f64>> {
        let mut config = NetConfig::new(1, vec![1], 0, dt_ms, arp_steps);
        config.precision = Precision::F64;
        config.recurrent = false;
        config.clamp = clamp;
        let leak = 1.0 - self.beta;
        if !(leak > 0.0) {
            return invalid_arg(format!("beta = {} leaves no leak", self.beta));
        }
        let layer = LayerParams {
            beta: vec![self.beta],
            p: vec![self.p],
            d: vec![self.d],
            b: vec![self.bias / leak],
            w_ff: Array2::from_elem((1, 1), self.gain / leak),
            w_rec: None,
        };
        let net = Network {
            config,
            layers: vec![layer],
            readout: None,
        };
        net.validate()?;
        Ok(net)
    }

    /// Reads the unnormalised parameters back out of a one-neuron network.
    fn from_network(net: &Network<f64>) -> Self {
        let l = &net.layers[0];
        let leak = 1.0 - l.beta[0];
        Self {
            gain: l.w_ff[[0, 0]] * leak,
            bias: l.b[0] * leak,
            beta: l.beta[0],
            p: l.p[0],
            d: l.d[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub engine: Engine,
    pub dt_ms: f64,
    pub arp_ms: f64,
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a lower training loss.
    pub patience: usize,
    pub surrogate: SurrogateKind,
    pub van_rossum: VanRossumConfig,
    pub etv: EtvConfig,
    /// Longest membrane or adaptation time constant the clamp admits, in ms.
    pub tau_max_ms: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Block,
            dt_ms: REFERENCE_DT_MS,
            arp_ms: 2.0,
            lr: 1e-4,
            max_epochs: 200,
            patience: 5,
            surrogate: SurrogateKind::default(),
            van_rossum: VanRossumConfig::default(),
            etv: EtvConfig::default(),
            tau_max_ms: 1000.0,
        }
    }
}

impl FitConfig {
    /// Refractory period in steps, rounded to the nearest step.
    pub fn arp_steps(&self) -> Result<usize> {
        arp_steps(self.arp_ms, self.dt_ms)
    }

    pub fn clamp_ranges(&self) -> ClampRanges {
        ClampRanges::for_time_constant(self.dt_ms, self.tau_max_ms)
    }
}

/// `round(arp_ms / dt_ms)`, which must be at least one step.
pub fn arp_steps(arp_ms: f64, dt_ms: f64) -> Result<usize> {
    if !(dt_ms > 0.0) || !(arp_ms > 0.0) {
        return invalid_arg(format!("arp ({arp_ms} ms) and dt ({dt_ms} ms) must be positive"));
    }
    let steps = (arp_ms / dt_ms).round();
    if steps < 1.0 {
        return invalid_arg(format!("arp of {arp_ms} ms is under half a step of {dt_ms} ms"));
    }
    Ok(steps as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub engine: Engine,
    pub dt_ms: f64,
    pub arp_steps: usize,
    /// Parameters with the lowest training loss.
    pub params: NeuronParams,
    pub tau_mem_ms: f64,
    pub tau_adapt_ms: f64,
    pub best_loss: f64,
    pub train_etv: f64,
    pub test_etv: f64,
    pub epochs: usize,
    pub wall_secs: f64,
    /// Mean van Rossum distance per epoch, before that epoch's update.
    pub loss_curve: Vec<f64>,
}

fn check_stimuli(set: &[Stimulus], what: &str) -> Result<()> {
    if set.is_empty() {
        return invalid_arg(format!("{what} set is empty"));
    }
    for (i, s) in set.iter().enumerate() {
        if s.current.is_empty() || s.repeats.is_empty() {
            return invalid_arg(format!("{what} stimulus {i} has no samples or no repeats"));
        }
        if s.repeats.iter().any(|r| r.len() != s.current.len()) {
            return invalid_arg(format!("{what} stimulus {i}: spike trains and current differ in length"));
        }
    }
    Ok(())
}

/// Currents of every stimulus, zero-padded to the longest one.
fn current_batch(set: &[Stimulus]) -> Array3<f64> {
    let steps = set.iter().map(|s| s.current.len()).max().unwrap_or(0);
    let mut out = Array3::zeros((set.len(), 1, steps));
    for (b, s) in set.iter().enumerate() {
        for (t, &x) in s.current.iter().enumerate() {
            out[[b, 0, t]] = x;
        }
    }
    out
}

/// Spike trains the neuron emits for each stimulus, trimmed to its length.
pub fn predict(
    params: &NeuronParams,
    set: &[Stimulus],
    engine: Engine,
    dt_ms: f64,
    arp_steps: usize,
    clamp: ClampRanges,
) -> Result<Vec<Vec<u8>>> {
    let net = params.to_network(dt_ms, arp_steps, clamp)?;
    let current = current_batch(set);
    let r = simulate(&net, Input::Current(current.view()), &SimConfig::new(engine))?;
    let out = &r.spikes[0];
    Ok(set
        .iter()
        .enumerate()
        .map(|(b, s)| out.train(b, 0)[..s.current.len()].to_vec())
        .collect())
}

/// ETV of the neuron's predictions on `set`.
pub fn score(params: &NeuronParams, set: &[Stimulus], cfg: &FitConfig) -> Result<f64> {
    let preds = predict(params, set, cfg.engine, cfg.dt_ms, cfg.arp_steps()?, cfg.clamp_ranges())?;
    let segments: Vec<EtvSegment<'_>> = preds
        .iter()
        .zip(set)
        .map(|(p, s)| EtvSegment {
            pred: p,
            repeats: &s.repeats,
        })
        .collect();
    etv(&segments, &cfg.etv, cfg.dt_ms)
}

/// Fits from the standard initialisation.
pub fn fit_neuron(train: &[Stimulus], test: &[Stimulus], cfg: &FitConfig) -> Result<FitReport> {
    fit_neuron_from(NeuronParams::init(cfg.dt_ms), train, test, cfg)
}

/// Full-batch Adam on the mean van Rossum distance over every training
/// repeat, keeping the parameters with the lowest loss.
pub fn fit_neuron_from(
    init: NeuronParams,
    train: &[Stimulus],
    test: &[Stimulus],
    cfg: &FitConfig,
) -> Result<FitReport> {
    check_stimuli(train, "training")?;
    check_stimuli(test, "test")?;
    if !(cfg.lr > 0.0) {
        return invalid_arg(format!("learning rate must be positive, got {}", cfg.lr));
    }
    let start = Instant::now();
    let arp = cfg.arp_steps()?;
    let clamp = cfg.clamp_ranges();
    let current = current_batch(train);
    let steps = current.dim().2;
    let pairs: usize = train.iter().map(|s| s.repeats.len()).sum();
    let adam = AdamConfig::with_lr(cfg.lr);
    let grad_cfg = GradConfig {
        surrogate: cfg.surrogate,
        ..GradConfig::default()
    };

    // the optimiser works on a copy whose w_ff and b hold gain and bias
    let mut raw = init.to_network(cfg.dt_ms, arp, clamp)?;
    raw.clamp();
    let mut params = NeuronParams::from_network(&raw);
    {
        let l = &mut raw.layers[0];
        l.w_ff[[0, 0]] = params.gain;
        l.b[0] = params.bias;
    }
    let mut state = AdamState::default();
    let mut best = params;
    let mut best_loss = f64::INFINITY;
    let mut stall = 0;
    let mut loss_curve = Vec::new();

    for _ in 0..cfg.max_epochs {
        let net = params.to_network(cfg.dt_ms, arp, clamp)?;
        let (rollout, tape) = simulate_with_tape(&net, Input::Current(current.view()), &SimConfig::new(cfg.engine))?;
        let out = &rollout.spikes[0];
        let mut g = Array3::<f64>::zeros((train.len(), 1, steps));
        let mut loss = 0.0;
        for (b, s) in train.iter().enumerate() {
            let pred = &out.train(b, 0)[..s.current.len()];
            for y in &s.repeats {
                let (d, grad) = van_rossum_grad(pred, y, &cfg.van_rossum, cfg.dt_ms)?;
                loss += d / pairs as f64;
                for (t, v) in grad.into_iter().enumerate() {
                    g[[b, 0, t]] += v / pairs as f64;
                }
            }
        }
        loss_curve.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = params;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        }
        let grads = backward(
            &net,
            &tape,
            &OutputGrad {
                readout: None,
                spikes: Some(g),
            },
            &grad_cfg,
        )?;
        let mut raw_grads = grads;
        {
            let (gl, l) = (&mut raw_grads.layers[0], &net.layers[0]);
            let leak = 1.0 - l.beta[0];
            let (gw, gb) = (gl.w_ff[[0, 0]], gl.b[0]);
            // w = gain / leak and b = bias / leak both depend on beta
            gl.beta[0] += (gw * l.w_ff[[0, 0]] + gb * l.b[0]) / leak;
            gl.w_ff[[0, 0]] = gw / leak;
            gl.b[0] = gb / leak;
        }
        adam_step(&mut raw, &raw_grads, &mut state, &adam, cfg.lr)?;
        let l = &raw.layers[0];
        params = NeuronParams {
            gain: l.w_ff[[0, 0]],
            bias: l.b[0],
            beta: l.beta[0],
            p: l.p[0],
            d: l.d[0],
        };
    }

    let train_etv = score(&best, train, cfg)?;
    let test_etv = score(&best, test, cfg)?;
    Ok(FitReport {
        engine: cfg.engine,
        dt_ms: cfg.dt_ms,
        arp_steps: arp,
        params: best,
        tau_mem_ms: best.tau_mem_ms(cfg.dt_ms),
        tau_adapt_ms: best.tau_adapt_ms(cfg.dt_ms),
        best_loss,
        train_etv,
        test_etv,
        epochs: loss_curve.len(),
        wall_secs: start.elapsed().as_secs_f64(),
        loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initialisation_scales_with_resolution() {
        let a = NeuronParams::init(0.1);
        assert!((a.gain - 0.01).abs() < 1e-15 && (a.d - 0.1).abs() < 1e-15);
        let b = NeuronParams::init(0.2);
        assert!((b.gain - 0.02).abs() < 1e-15 && (b.d - 0.05).abs() < 1e-15);
        assert!((a.tau_mem_ms(0.1) - 20.0).abs() < 1e-9);
        assert!((b.tau_adapt_ms(0.2) - 100.0).abs() < 1e-9);
        // steady-state drive is the same at both resolutions to first order
        let drive = |p: NeuronParams| p.gain / (1.0 - p.beta);
        assert!((drive(a) / drive(b) - 1.0).abs() < 0.01);
    }

    #[test]
    fn network_mapping_round_trips() {
        let p = NeuronParams {
            gain: 0.013,
            bias: 0.002,
            ..NeuronParams::init(0.1)
        };
        let net = p.to_network(0.1, 20, ClampRanges::for_time_constant(0.1, 1000.0)).unwrap();
        let q = NeuronParams::from_network(&net);
        assert!((p.gain - q.gain).abs() < 1e-15 && (p.bias - q.bias).abs() < 1e-15);
    }

    #[test]
    fn arp_rounds_to_steps() {
        assert_eq!(arp_steps(2.0, 0.1).unwrap(), 20);
        assert_eq!(arp_steps(2.0, 4.0).unwrap(), 1);
        assert!(arp_steps(0.04, 0.1).is_err());
    }

    #[test]
    fn empty_data_is_rejected() {
        let s = Stimulus {
            current: vec![0.0; 10],
            repeats: vec![vec![0; 10]; 2],
        };
        assert!(fit_neuron(&[], &[s.clone()], &FitConfig::default()).is_err());
        assert!(fit_neuron(&[s], &[], &FitConfig::default()).is_err());
    }
}
