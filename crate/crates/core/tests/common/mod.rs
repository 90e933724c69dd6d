#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refrax::params::{LayerParams, NetConfig, Network};
use refrax::sim::{simulate, Engine, SimConfig};
use refrax::{Input, Precision, SpikeTensor};

/// Steps closer than this to threshold may flip under reordered arithmetic.
pub mod grad;

pub const KNIFE_EDGE: f64 = 1e-9;

pub struct Case {
    pub net: Network<f64>,
    pub input: SpikeTensor,
}

fn random_layer(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize, gain: f64) -> LayerParams<f64> {
    let mut l = LayerParams::<f64>::zeros(n_in, n_out, false, true);
    l.beta = (0..n_out).map(|_| rng.random_range(0.01..=0.99)).collect();
    l.p = (0..n_out).map(|_| rng.random_range(0.05..=0.999)).collect();
    l.d = (0..n_out).map(|_| rng.random_range(0.0..2.0)).collect();
    l.b = (0..n_out).map(|_| rng.random_range(-0.5..1.5)).collect();
    l.w_ff.mapv_inplace(|_| rng.random_range(-1.0..1.0) * gain);
    if let Some(w) = l.w_rec.as_mut() {
        w.mapv_inplace(|_| rng.random_range(-1.0..1.0) * gain);
    }
    l
}

/// Random network and input spikes within the fuzzing envelope: batch <= 4,
/// widths <= 16, depth <= 3, T <= 256, T_R in 1..=32.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.random_range(1..=4);
    let n_in = rng.random_range(1..=16);
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=16)).collect();
    let steps = rng.random_range(1..=256);
    let arp = rng.random_range(1..=32);
    let classes = if rng.random_bool(0.5) { rng.random_range(2..=4) } else { 0 };
    let mut config = NetConfig::new(n_in, widths.clone(), classes, 1.0, arp);
    config.precision = Precision::F64;
    let mut layers = Vec::new();
    let mut prev = n_in;
    for &w in &widths {
        let gain = rng.random_range(0.5..4.0) / (prev as f64).sqrt();
        layers.push(random_layer(&mut rng, prev, w, gain));
        prev = w;
    }
    let readout = (classes > 0).then(|| {
        let mut r = LayerParams::<f64>::zeros(prev, classes, true, false);
        r.beta = (0..classes).map(|_| rng.random_range(0.01..=0.99)).collect();
        r.b = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        r.w_ff.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        r
    });
    let rate = rng.random_range(0.02..0.5);
    let data = (0..batch * n_in * steps).map(|_| rng.random_bool(rate) as u8).collect();
    Case {
        net: Network {
            config,
            layers,
            readout,
        },
        input: SpikeTensor::from_vec(batch, n_in, steps, data).unwrap(),
    }
}

/// Summary of a cross-engine comparison.
#[derive(Debug, Default, Clone, Copy)]
pub struct Agreement {
    pub compared_steps: usize,
    pub excluded_steps: usize,
    pub spikes: usize,
}

/// Compares both engines on one case. Each batch row is compared up to its
/// first knife-edge step in either engine, since a flip there legitimately
/// changes everything downstream.
pub fn compare_engines(case: &Case) -> Result<Agreement, String> {
    let input = Input::Spikes(&case.input);
    let std = simulate(&case.net, input, &SimConfig::new(Engine::Standard).with_traces())
        .map_err(|e| e.to_string())?;
    let blk = simulate(&case.net, input, &SimConfig::new(Engine::Block).with_traces())
        .map_err(|e| e.to_string())?;
    let (batch, _, steps) = case.input.dims();
    let st = std.traces.as_ref().unwrap();
    let bt = blk.traces.as_ref().unwrap();
    let hidden = case.net.layers.len();
    let mut agreement = Agreement::default();
    for b in 0..batch {
        let mut cutoff = steps;
        for l in 0..hidden {
            for n in 0..st[l].margin.shape()[1] {
                for t in 0..cutoff {
                    let a = st[l].margin[[b, n, t]];
                    let c = bt[l].margin[[b, n, t]];
                    if a.abs() < KNIFE_EDGE || c.abs() < KNIFE_EDGE {
                        cutoff = t;
                        break;
                    }
                }
            }
        }
        agreement.compared_steps += cutoff;
        agreement.excluded_steps += steps - cutoff;
        for l in 0..hidden {
            let (s, k) = (&std.spikes[l], &blk.spikes[l]);
            for n in 0..s.neurons() {
                for t in 0..cutoff {
                    if s.get(b, n, t) != k.get(b, n, t) {
                        return Err(format!("spike mismatch at layer {l} row {b} neuron {n} step {t}"));
                    }
                    agreement.spikes += s.get(b, n, t) as usize;
                    let (x, y) = (st[l].membrane[[b, n, t]], bt[l].membrane[[b, n, t]]);
                    if (x - y).abs() > 1e-9 * 1f64.max(x.abs()).max(y.abs()) {
                        return Err(format!(
                            "membrane mismatch at layer {l} row {b} neuron {n} step {t}: {x} vs {y}"
                        ));
                    }
                }
            }
        }
        if case.net.readout.is_some() && cutoff == steps {
            let (x, y) = (st[hidden].membrane.clone(), bt[hidden].membrane.clone());
            for ((_, a), c) in x.indexed_iter().filter(|((bb, _, _), _)| *bb == b).zip(
                y.indexed_iter().filter(|((bb, _, _), _)| *bb == b).map(|(_, v)| v),
            ) {
                if (a - c).abs() > 1e-9 * 1f64.max(a.abs()).max(c.abs()) {
                    return Err(format!("readout membrane mismatch in row {b}: {a} vs {c}"));
                }
            }
        }
    }
    Ok(agreement)
}
