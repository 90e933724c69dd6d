//! Recordings from a known ALIF neuron, for checking that a fit recovers it.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::fitting::neuron::NeuronParams;
use crate::fitting::preprocess::{CurrentTrace, Recording, Split};
use crate::params::ClampRanges;
use crate::sim::{simulate, Engine, SimConfig};
use crate::spikes::Input;

/// The neuron that produces the recordings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: NeuronParams,
    pub dt_ms: f64,
    pub arp_steps: usize,
}

impl Default for GroundTruth {
    fn default() -> Self {
        let dt_ms = 0.1;
        Self {
            params: NeuronParams {
                gain: 0.02,
                bias: 0.001,
                beta: (-dt_ms / 20.0f64).exp(),
                p: (-dt_ms / 100.0f64).exp(),
                d: 1.0,
            },
            dt_ms,
            arp_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_stimuli: usize,
    pub test_stimuli: usize,
    pub duration_ms: f64,
    pub repeats: usize,
    /// Standard deviation of the private noise added to each repeat, relative
    /// to the unit-variance stimulus.
    pub jitter: f64,
    /// Correlation times of the slow and fast stimulus components, in ms.
    pub slow_ms: f64,
    pub fast_ms: f64,
    /// Recorded current is `offset + scale * stimulus`.
    pub offset: f64,
    pub scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_stimuli: 4,
            test_stimuli: 4,
            duration_ms: 4000.0,
            repeats: 4,
            jitter: 0.3,
            slow_ms: 300.0,
            fast_ms: 5.0,
            offset: 100.0,
            scale: 40.0,
            seed: 0,
        }
    }
}

/// Unit-variance Ornstein-Uhlenbeck samples with correlation time `tau`.
fn ou(steps: usize, tau_steps: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = (-1.0 / tau_steps).exp();
    let k = (1.0 - a * a).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    (0..steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            x = a * x + k * z;
            x
        })
        .collect()
}

/// Unit-variance mix of a slow and a fast component.
fn stimulus(steps: usize, spec: &SyntheticSpec, dt_ms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let slow = ou(steps, spec.slow_ms / dt_ms, rng);
    let fast = ou(steps, spec.fast_ms / dt_ms, rng);
    slow.iter().zip(&fast).map(|(s, f)| 0.8 * s + 0.6 * f).collect()
}

/// Drives the ground-truth neuron with `repeats` noisy copies of each
/// stimulus and records the spike times at bin centres.
pub fn synthetic_recordings(truth: &GroundTruth, spec: &SyntheticSpec) -> Result<Vec<Recording>> {
    if spec.repeats < 2 {
        return invalid_arg("synthetic recordings need at least 2 repeats");
    }
    let steps = (spec.duration_ms / truth.dt_ms).round() as usize;
    if steps == 0 || spec.train_stimuli == 0 || spec.test_stimuli == 0 {
        return invalid_arg("synthetic recordings need a positive duration and stimuli in both splits");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.train_stimuli + spec.test_stimuli;
    let stimuli: Vec<Vec<f64>> = (0..n).map(|_| stimulus(steps, spec, truth.dt_ms, &mut rng)).collect();
    let mut drive = Array3::zeros((n * spec.repeats, 1, steps));
    for (s, x) in stimuli.iter().enumerate() {
        for r in 0..spec.repeats {
            let noise = ou(steps, spec.fast_ms / truth.dt_ms, &mut rng);
            for t in 0..steps {
                drive[[s * spec.repeats + r, 0, t]] = x[t] + spec.jitter * noise[t];
            }
        }
    }
    let clamp = ClampRanges::for_time_constant(truth.dt_ms, 1000.0);
    let net = truth.params.to_network(truth.dt_ms, truth.arp_steps, clamp)?;
    let out = simulate(&net, Input::Current(drive.view()), &SimConfig::new(Engine::Standard))?;
    let spikes = &out.spikes[0];
    Ok(stimuli
        .into_iter()
        .enumerate()
        .map(|(s, x)| {
            let spike_times_ms = (0..spec.repeats)
                .map(|r| {
                    let train = spikes.train(s * spec.repeats + r, 0);
                    train
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0)
                        .map(|(t, _)| (t as f64 + 0.5) * truth.dt_ms)
                        .collect()
                })
                .collect();
            let split = if s < spec.train_stimuli { Split::Train } else { Split::Test };
            Recording {
                name: format!("stim{s:02}"),
                trace: CurrentTrace {
                    samples: x.iter().map(|v| spec.offset + spec.scale * v).collect(),
                    dt_ms: truth.dt_ms,
                    repeats: spec.repeats,
                    split,
                },
                spike_times_ms,
            }
        })
        .collect())
}
