//! Central finite differences against the reverse pass, in configurations
//! where the perturbations move no threshold crossing.
//!
//! With every spike fixed the forward map is smooth, and its exact gradient is
//! what the reverse pass returns for two losses: a linear loss on the readout
//! sums, and a loss `sum g * Phi(V - theta)` on the last hidden layer where
//! `Phi` integrates the fast-sigmoid surrogate. The second one is fed to the
//! reverse pass as a spike gradient `g`, which it multiplies by `Phi'`.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refrax::params::{LayerParams, NetConfig, Network};
use refrax::sim::{simulate, simulate_with_tape, Engine, SimConfig};
use refrax::train::{backward, DetachPolicy, GradConfig, OutputGrad, SurrogateKind};
use refrax::{Input, Precision, SpikeTensor};

pub const FD_STEP: f64 = 1e-6;
pub const FD_RTOL: f64 = 1e-3;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-5;

pub enum Source {
    Spikes(SpikeTensor),
    Current(Array3<f64>),
}

impl Source {
    fn input(&self) -> Input<'_, f64> {
        match self {
            Source::Spikes(s) => Input::Spikes(s),
            Source::Current(c) => Input::Current(c.view()),
        }
    }
}

pub struct SmoothCase {
    pub net: Network<f64>,
    pub source: Source,
}

/// Small random network with mid-range parameters and either spike or
/// current input.
pub fn smooth_case(seed: u64) -> SmoothCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.random_range(1..=2);
    let n_in = rng.random_range(2..=6);
    let depth = rng.random_range(1..=2);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
    let steps = rng.random_range(10..=60);
    let arp = rng.random_range(1..=8);
    let classes = rng.random_range(2..=3);
    let mut config = NetConfig::new(n_in, widths.clone(), classes, 1.0, arp);
    config.precision = Precision::F64;
    let mut layers = Vec::new();
    let mut prev = n_in;
    for &w in &widths {
        let gain = rng.random_range(1.0..3.0) / (prev as f64).sqrt();
        let mut l = LayerParams::<f64>::zeros(prev, w, false, true);
        l.beta = (0..w).map(|_| rng.random_range(0.1..0.9)).collect();
        l.p = (0..w).map(|_| rng.random_range(0.2..0.95)).collect();
        l.d = (0..w).map(|_| rng.random_range(0.0..1.5)).collect();
        l.b = (0..w).map(|_| rng.random_range(-0.2..0.8)).collect();
        l.w_ff.mapv_inplace(|_| rng.random_range(-1.0..1.0) * gain);
        if let Some(r) = l.w_rec.as_mut() {
            r.mapv_inplace(|_| rng.random_range(-1.0..1.0) * gain);
        }
        layers.push(l);
        prev = w;
    }
    let mut r = LayerParams::<f64>::zeros(prev, classes, true, false);
    r.beta = (0..classes).map(|_| rng.random_range(0.1..0.9)).collect();
    r.b = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
    r.w_ff.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let source = if rng.random_bool(0.5) {
        let data = (0..batch * n_in * steps).map(|_| rng.random_bool(0.3) as u8).collect();
        Source::Spikes(SpikeTensor::from_vec(batch, n_in, steps, data).unwrap())
    } else {
        Source::Current(Array3::from_shape_fn((batch, n_in, steps), |_| rng.random_range(-0.5..1.5)))
    };
    SmoothCase {
        net: Network {
            config,
            layers,
            readout: Some(r),
        },
        source,
    }
}

/// Antiderivative of the fast-sigmoid surrogate.
fn phi(x: f64) -> f64 {
    x.signum() * (1.0 - 1.0 / (10.0 * x.abs() + 1.0)) / 10.0
}

struct Eval {
    readout: f64,
    margin: f64,
    spikes: Vec<SpikeTensor>,
}

fn evaluate(net: &Network<f64>, src: &Source, engine: Engine, c: &Array2<f64>, g: &Array3<f64>) -> Option<Eval> {
    let r = simulate(net, src.input(), &SimConfig::new(engine).with_traces()).ok()?;
    let o = r.readout.as_ref()?;
    let readout = (o * c).sum();
    let top = &r.traces.as_ref()?[net.layers.len() - 1].margin;
    let margin = top.iter().zip(g).map(|(&m, &w)| w * phi(m)).sum();
    Some(Eval {
        readout,
        margin,
        spikes: r.spikes,
    })
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub rejected: usize,
    pub worst: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Bias,
    Beta,
    Ff,
    Rec,
    P,
    D,
}

fn slot<'a>(l: &'a mut LayerParams<f64>, f: Field, i: usize) -> Option<&'a mut f64> {
    match f {
        Field::Bias => l.b.get_mut(i),
        Field::Beta => l.beta.get_mut(i),
        Field::P => l.p.get_mut(i),
        Field::D => l.d.get_mut(i),
        Field::Ff => l.w_ff.as_slice_mut().unwrap().get_mut(i),
        Field::Rec => l.w_rec.as_mut()?.as_slice_mut().unwrap().get_mut(i),
    }
}

fn len(l: &LayerParams<f64>, f: Field) -> usize {
    match f {
        Field::Bias => l.b.len(),
        Field::Beta => l.beta.len(),
        Field::P => l.p.len(),
        Field::D => l.d.len(),
        Field::Ff => l.w_ff.len(),
        Field::Rec => l.w_rec.as_ref().map_or(0, |w| w.len()),
    }
}

/// Checks readout and last-hidden-layer gradients for `fields`, up to
/// `per_field` random entries each. Entries whose perturbation moves any
/// spike are counted as rejected.
pub fn fd_check(case: &SmoothCase, engine: Engine, fields: &[Field], per_field: usize, seed: u64) -> Result<FdReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = &case.net;
    let (batch, _, steps) = case.source.input().dims();
    let classes = net.config.n_classes;
    let top = net.layers.len() - 1;
    let width = net.output_width();
    let arp = net.config.arp_steps;
    let c = Array2::from_shape_fn((batch, classes), |_| rng.random_range(-1.0..1.0));
    let mut g = Array3::from_shape_fn((batch, width, steps), |_| rng.random_range(-1.0..1.0));

    let cfg = SimConfig::new(engine);
    let (base, tape) = simulate_with_tape(net, case.source.input(), &cfg).map_err(|e| e.to_string())?;
    // Within a Block, steps after the first spike carry no surrogate term.
    let out = &base.spikes[top];
    for b in 0..batch {
        for n in 0..width {
            let mut fired_block = None;
            for t in 0..steps {
                if fired_block == Some(t / arp) {
                    g[[b, n, t]] = 0.0;
                }
                if out.get(b, n, t) {
                    fired_block = Some(t / arp);
                }
            }
        }
    }
    let gc = GradConfig {
        surrogate: SurrogateKind::FastSigmoid,
        detach: DetachPolicy::Detached,
    };
    let via_readout = backward(
        net,
        &tape,
        &OutputGrad {
            readout: Some(c.clone()),
            spikes: None,
        },
        &gc,
    )
    .map_err(|e| e.to_string())?;
    let via_margin = backward(
        net,
        &tape,
        &OutputGrad {
            readout: None,
            spikes: Some(g.clone()),
        },
        &gc,
    )
    .map_err(|e| e.to_string())?;

    let mut report = FdReport::default();
    // (layer index or None for the readout, analytic gradient network, loss selector)
    let targets: [(Option<usize>, &Network<f64>, bool); 2] = [(None, &via_readout, true), (Some(top), &via_margin, false)];
    for (layer, grads, readout_loss) in targets {
        for &f in fields {
            let proto = layer.map_or(net.readout.as_ref().unwrap(), |l| &net.layers[l]);
            let count = len(proto, f);
            if count == 0 {
                continue;
            }
            for _ in 0..per_field.min(count) {
                let i = rng.random_range(0..count);
                let mut loss = [0.0; 2];
                let mut moved = false;
                for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let mut pert = net.clone();
                    let l = match layer {
                        Some(l) => &mut pert.layers[l],
                        None => pert.readout.as_mut().unwrap(),
                    };
                    *slot(l, f, i).unwrap() += sign * FD_STEP;
                    let Some(e) = evaluate(&pert, &case.source, engine, &c, &g) else {
                        moved = true;
                        break;
                    };
                    if e.spikes != base.spikes {
                        moved = true;
                        break;
                    }
                    loss[k] = if readout_loss { e.readout } else { e.margin };
                }
                if moved {
                    report.rejected += 1;
                    continue;
                }
                let fd = (loss[0] - loss[1]) / (2.0 * FD_STEP);
                let gl = match layer {
                    Some(l) => &grads.layers[l],
                    None => grads.readout.as_ref().unwrap(),
                };
                let mut gl = gl.clone();
                let an = *slot(&mut gl, f, i).unwrap();
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(FD_FLOOR);
                report.worst = report.worst.max(err);
                report.checked += 1;
                if err > FD_RTOL {
                    return Err(format!(
                        "{engine} {:?} {f:?}[{i}] analytic {an} vs finite difference {fd}",
                        layer.map_or("readout".to_string(), |l| format!("layer {l}"))
                    ));
                }
            }
        }
    }
    Ok(report)
}
