//! Acceptance checks. Each test prints one PASS or FAIL line and then asserts.
//!
//! The tests hold a shared lock so that wall-clock comparisons never compete
//! with another test for the CPU.

mod common;

use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refrax::bench::{bench_case, case_setup, stage_counts, BenchMode, Case, GridSpec};
use refrax::block::{carry_adaptation, first_spike_only, latent_spike_timing};
use refrax::data_io::{read_spkt, two_rate_dataset, write_spkt};
use refrax::fitting::metrics::{gaussian_kernel, smooth, etv_traces};
use refrax::fitting::{
    etv, fit_neuron, prepare, synthetic_recordings, van_rossum, EtvConfig, EtvSegment, FitConfig, GroundTruth,
    NormStats, Split, SyntheticSpec, VanRossumConfig,
};
use refrax::params::{NetConfig, Network};
use refrax::sim::{simulate, Engine, SimConfig};
use refrax::train::{evaluate, train_classifier, TrainConfig};
use refrax::{Input, SpikeTensor};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, ok: bool, detail: String) {
    println!("{} criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {detail}");
}

#[test]
fn c01_cross_engine_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut total = common::Agreement::default();
    let mut failure = None;
    for seed in 0..500 {
        match common::compare_engines(&common::random_case(1_000 + seed)) {
            Ok(a) => {
                total.compared_steps += a.compared_steps;
                total.excluded_steps += a.excluded_steps;
                total.spikes += a.spikes;
            }
            Err(e) => {
                failure = Some(format!("seed {}: {e}", 1_000 + seed));
                break;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failure.is_none() && secs < 120.0 && total.spikes > 0;
    verdict(
        1,
        ok,
        format!(
            "500 fuzzed networks, {} steps compared, {} past a knife edge, {} spikes, {secs:.1} s (limit 120 s){}",
            total.compared_steps,
            total.excluded_steps,
            total.spikes,
            failure.map_or(String::new(), |f| format!(", {f}"))
        ),
    );
}

#[test]
fn c02_latent_timing_exhaustive() {
    let _g = serial();
    let start = Instant::now();
    let mut bad = None;
    for bits in 0u32..1 << 16 {
        let s: Vec<u8> = (0..16).map(|k| ((bits >> k) & 1) as u8).collect();
        let z = latent_spike_timing(&s);
        let ones: Vec<usize> = (0..16).filter(|&t| z[t] == 1).collect();
        let first = s.iter().position(|&v| v == 1);
        let ok = match first {
            None => z.iter().all(|&v| v == 0) && ones.is_empty(),
            Some(f) => {
                ones == [f]
                    && z[..f].iter().all(|&v| v == 0)
                    && z[f..].windows(2).all(|w| w[1] > w[0])
                    && first_spike_only(&z).iter().enumerate().all(|(t, &v)| v == (t == f) as u8)
            }
        };
        if !ok {
            bad = Some(bits);
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        bad.is_none() && secs < 10.0,
        format!("all 65536 inputs of length 16 checked in {secs:.2} s (limit 10 s){}", bad.map_or(String::new(), |b| format!(", fails on {b:016b}"))),
    );
}

#[test]
fn c03_adaptation_carry() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for p in [0.1f64, 0.5, 0.9, 0.999] {
        for arp in 1..=64usize {
            for first in 0..=arp {
                let a0: f64 = rng.random_range(0.0..3.0);
                // faulty spike candidates: the first at `first` (1-based) and
                // random ones after it, which the carry must ignore
                let s: Vec<u8> = (1..=arp)
                    .map(|t| (first > 0 && (t == first || (t > first && rng.random_bool(0.3)))) as u8)
                    .collect();
                // step recurrence a[t] = p a[t-1] + S[t-1], run one step into
                // the next Block, where a = p * a0_next
                let mut a = a0;
                let mut prev_spike = 0.0;
                for t in 1..=arp + 1 {
                    a = p * a + prev_spike;
                    prev_spike = (t == first) as u8 as f64;
                }
                let oracle = a / p;
                let formula = carry_adaptation(a0, p, &latent_spike_timing(&s)).unwrap();
                worst = worst.max((formula - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE));
                cases += 1;
            }
        }
    }
    verdict(3, worst <= 1e-12, format!("{cases} spike positions, worst relative error {worst:.2e} (limit 1e-12)"));
}

#[test]
fn c04_stage_accounting() {
    let _g = serial();
    let grid = GridSpec::default();
    let mut bad = Vec::new();
    for case in grid.cases() {
        let (net, input) = case_setup(&case, 0).unwrap();
        let standard = stage_counts(&net, &input, Engine::Standard).unwrap();
        let block = stage_counts(&net, &input, Engine::Block).unwrap();
        let blocks = case.steps.div_ceil(case.arp);
        if standard != vec![case.steps; case.depth] || block != vec![blocks; case.depth] {
            bad.push(format!("{case:?}: standard {standard:?}, block {block:?}"));
        }
    }
    verdict(
        4,
        bad.is_empty(),
        format!("{} grid cases report T and ceil(T/T_R) stages per layer{}", grid.cases().len(), if bad.is_empty() { String::new() } else { format!("; mismatches: {bad:?}") }),
    );
}

#[test]
fn c05_speedup() {
    let _g = serial();
    let base = Case {
        steps: 1024,
        arp: 40,
        batch: 64,
        width: 256,
        depth: 2,
    };
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut ok = true;
    let mut notes = Vec::new();
    for mode in [BenchMode::Forward, BenchMode::Train] {
        let r = bench_case(&base, mode, 3, 0).unwrap();
        // spike identity is checked in 64-bit by criterion 1; benchmark
        // networks run in 32-bit, where a knife-edge step may flip
        ok &= r.block_ms < r.standard_ms;
        if cores >= 4 {
            ok &= r.speedup >= 2.0;
        }
        notes.push(format!(
            "{mode} {:.0} vs {:.0} ms ({:.2}x, spikes identical: {})",
            r.block_ms, r.standard_ms, r.speedup, r.outputs_match
        ));
        let sweep: Vec<f64> = [1, 8, 16, 32, 64]
            .iter()
            .map(|&arp| bench_case(&Case { arp, ..base }, mode, 3, 0).unwrap().speedup)
            .collect();
        let inversions = sweep.windows(2).filter(|w| w[1] < w[0]).count();
        ok &= inversions <= 1;
        notes.push(format!(
            "{mode} speedup over T_R 1,8,16,32,64: {} ({inversions} inversions)",
            sweep.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join(",")
        ));
    }
    let scale = if cores >= 4 { "2x asserted" } else { "2x not asserted" };
    verdict(5, ok, format!("{cores} cores, {scale}; {}", notes.join("; ")));
}

#[test]
fn c06_two_rate_training() {
    let _g = serial();
    let start = Instant::now();
    let train = two_rate_dataset(64, 32, 300, (20.0, 100.0), 1).unwrap();
    let test = two_rate_dataset(64, 32, 300, (20.0, 100.0), 2).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for engine in [Engine::Standard, Engine::Block] {
        let mut net = Network::<f32>::init(NetConfig::new(32, vec![64, 64], 2, 1.0, 5), 0).unwrap();
        let cfg = TrainConfig {
            engine,
            epochs: 200,
            batch_size: 16,
            stop_at_accuracy: Some(1.0),
            ..TrainConfig::default()
        };
        let out = train_classifier(&mut net, &train, &cfg, |_| {}).unwrap();
        let (_, acc) = evaluate(&out.best, &test, engine, 64).unwrap();
        ok &= acc >= 0.9;
        notes.push(format!("{engine} held-out {acc:.3} after {} epochs", out.log.len()));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 900.0;
    verdict(6, ok, format!("{}, {secs:.0} s (limit 900 s)", notes.join(", ")));
}

#[test]
fn c07_gradient_checks() {
    let _g = serial();
    use common::grad::{fd_check, smooth_case, Field};
    let mut notes = Vec::new();
    let mut ok = true;
    for engine in [Engine::Standard, Engine::Block] {
        let (mut checked, mut worst) = (0, 0.0f64);
        for seed in 0..40 {
            match fd_check(&smooth_case(seed), engine, &[Field::Bias, Field::Beta, Field::Ff], 4, seed) {
                Ok(r) => {
                    checked += r.checked;
                    worst = worst.max(r.worst);
                }
                Err(e) => {
                    ok = false;
                    notes.push(e);
                }
            }
        }
        ok &= checked > 100;
        notes.push(format!("{engine} {checked} entries, worst {worst:.1e}"));
    }
    verdict(7, ok, format!("bias, beta and feedforward weights within 1e-3: {}", notes.join(", ")));
}

#[test]
fn c08_fitting() {
    let _g = serial();
    let recordings = synthetic_recordings(&GroundTruth::default(), &SyntheticSpec::default()).unwrap();
    let stats = NormStats::from_train(recordings.iter().map(|r| &r.trace)).unwrap();
    let fit = |engine, dt_ms| {
        let train = prepare(&recordings, Split::Train, &stats, dt_ms).unwrap();
        let test = prepare(&recordings, Split::Test, &stats, dt_ms).unwrap();
        let cfg = FitConfig {
            engine,
            dt_ms,
            arp_ms: 2.0,
            ..FitConfig::default()
        };
        fit_neuron(&train, &test, &cfg).unwrap()
    };
    let block = fit(Engine::Block, 0.1);
    let standard = fit(Engine::Standard, 0.1);
    let coarse = fit(Engine::Block, 4.0);
    let ok = block.test_etv >= 0.9
        && standard.test_etv >= 0.9
        && block.wall_secs < standard.wall_secs
        && coarse.test_etv <= block.test_etv
        && [&block, &standard, &coarse].iter().all(|r| r.wall_secs < 600.0);
    verdict(
        8,
        ok,
        format!(
            "held-out ETV block {:.3}, standard {:.3} (min 0.9); fit time block {:.2} s vs standard {:.2} s; DT 4 ms ETV {:.3}",
            block.test_etv, standard.test_etv, block.wall_secs, standard.wall_secs, coarse.test_etv
        ),
    );
}

fn bernoulli(n: usize, rate: impl Fn(usize) -> f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..n).map(|t| rng.random_bool(rate(t).clamp(0.0, 1.0)) as u8).collect()
}

#[test]
fn c09_metrics() {
    let _g = serial();
    let vr = VanRossumConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ok = true;
    let mut self_max: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..400);
        let (px, py) = (rng.random_range(0.0..0.3), rng.random_range(0.0..0.3));
        let x = bernoulli(n, |_| px, &mut rng);
        let y = bernoulli(n, |_| py, &mut rng);
        let dxy = van_rossum(&x, &y, &vr, 1.0).unwrap();
        let dyx = van_rossum(&y, &x, &vr, 1.0).unwrap();
        self_max = self_max.max(van_rossum(&x, &x, &vr, 1.0).unwrap());
        asym = asym.max((dxy - dyx).abs());
        ok &= dxy >= 0.0;
    }
    ok &= self_max == 0.0 && asym == 0.0;

    let ecfg = EtvConfig::default();
    let kernel = gaussian_kernel(&ecfg, 1.0).unwrap();
    // a minute of recording at 1 ms; shorter ones leave too few independent
    // smoothed samples for the null spread to stay under 0.1
    let steps = 60_000;
    let drive: Vec<f64> = {
        let mut r = ChaCha8Rng::seed_from_u64(90);
        let phases: Vec<f64> = (0..4).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
        (0..steps)
            .map(|t| {
                let s: f64 = phases.iter().enumerate().map(|(k, ph)| (t as f64 / (300.0 * (k + 1) as f64) + ph).sin()).sum();
                0.02 * (1.0 + 0.8 * s).max(0.0)
            })
            .collect()
    };
    let repeats: Vec<Vec<u8>> = (0..4).map(|_| bernoulli(steps, |t| drive[t], &mut rng)).collect();
    let smoothed: Vec<Vec<f64>> = repeats.iter().map(|r| smooth(r, &kernel)).collect();
    let mean: Vec<f64> = (0..steps).map(|t| smoothed.iter().map(|r| r[t]).sum::<f64>() / 4.0).collect();
    let perfect = etv_traces(&mean, &smoothed).unwrap();
    ok &= (perfect - 1.0).abs() < 1e-12;

    let score = |pred: &[u8]| etv(&[EtvSegment { pred, repeats: &repeats }], &ecfg, 1.0).unwrap();
    let nulls: Vec<f64> = (0..20)
        .map(|seed| score(&bernoulli(steps, |_| 0.02, &mut ChaCha8Rng::seed_from_u64(1_000 + seed))))
        .collect();
    let null_max = nulls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let null_mean = nulls.iter().sum::<f64>() / nulls.len() as f64;
    // a prediction drawn from the true rate shows the setup can tell them apart
    let matched = score(&bernoulli(steps, |t| drive[t], &mut rng));
    ok &= null_max < 0.1 && matched > 0.5;
    verdict(
        9,
        ok,
        format!(
            "van Rossum self-distance max {self_max}, asymmetry max {asym} over 1000 pairs; ETV of repeat mean {perfect:.12}; ETV of 20 uncorrelated predictions mean {null_mean:.3}, max {null_max:.3} (limit 0.1); rate-matched prediction {matched:.3}"
        ),
    );
}

#[test]
fn c10_io_round_trips() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut spkt_ok = true;
    for _ in 0..200 {
        let (b, n, t) = (rng.random_range(0..5), rng.random_range(0..20), rng.random_range(0..300));
        let p = rng.random_range(0.0..1.0);
        let data = (0..b * n * t).map(|_| rng.random_bool(p) as u8).collect();
        let x = SpikeTensor::from_vec(b, n, t, data).unwrap();
        spkt_ok &= read_spkt(&write_spkt(&x)).unwrap() == x;
    }
    let mut json_ok = true;
    for seed in 0..50 {
        let case = common::random_case(5_000 + seed);
        let back = Network::<f64>::from_json(&case.net.to_json().unwrap()).unwrap();
        let cfg = SimConfig::new(Engine::Block).with_traces();
        let a = simulate(&case.net, Input::Spikes(&case.input), &cfg).unwrap();
        let b = simulate(&back, Input::Spikes(&case.input), &cfg).unwrap();
        let bits = |r: &refrax::Rollout<f64>| {
            let mut v: Vec<u64> = r.readout.iter().flatten().map(|x| x.to_bits()).collect();
            for tr in r.traces.as_ref().unwrap() {
                v.extend(tr.membrane.iter().map(|x| x.to_bits()));
            }
            v
        };
        json_ok &= a.spikes == b.spikes && bits(&a) == bits(&b);
    }
    verdict(
        10,
        spkt_ok && json_ok,
        format!("200 fuzzed SPKT tensors identical: {spkt_ok}; 50 parameter files reproduce 64-bit outputs bit for bit: {json_ok}"),
    );
}
