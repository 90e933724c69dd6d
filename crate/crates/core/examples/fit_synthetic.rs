//! Fits a single ALIF neuron to recordings from a known ground-truth neuron
//! and reports held-out ETV for each engine.
//!
//! Usage: cargo run --release --example fit_synthetic [dt_ms] [arp_ms]

use refrax::fitting::{
    fit_neuron, prepare, synthetic_recordings, FitConfig, GroundTruth, NormStats, Split, SyntheticSpec,
};
use refrax::Engine;

fn main() -> refrax::Result<()> {
    let mut args = std::env::args().skip(1);
    let dt_ms: f64 = args.next().map_or(0.1, |s| s.parse().expect("dt_ms"));
    let arp_ms: f64 = args.next().map_or(2.0, |s| s.parse().expect("arp_ms"));
    let recordings = synthetic_recordings(&GroundTruth::default(), &SyntheticSpec::default())?;
    let stats = NormStats::from_train(recordings.iter().map(|r| &r.trace))?;
    let train = prepare(&recordings, Split::Train, &stats, dt_ms)?;
    let test = prepare(&recordings, Split::Test, &stats, dt_ms)?;
    let rate: f64 = train.iter().flat_map(|s| &s.repeats).map(|r| r.iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>()
        / (train.iter().map(|s| s.repeats.len() as f64 * s.current.len() as f64 * dt_ms).sum::<f64>() / 1000.0);
    println!("recorded rate {rate:.1} Hz");
    let probe = FitConfig { dt_ms, arp_ms, ..FitConfig::default() };
    let truth = GroundTruth::default();
    if (dt_ms - truth.dt_ms).abs() < 1e-12 {
        println!("truth ETV {:.3}", refrax::fitting::score(&truth.params, &test, &probe)?);
    }
    println!("init ETV {:.3}", refrax::fitting::score(&refrax::fitting::NeuronParams::init(dt_ms), &test, &probe)?);
    for engine in [Engine::Block, Engine::Standard] {
        let cfg = FitConfig {
            engine,
            dt_ms,
            arp_ms,
            ..FitConfig::default()
        };
        let r = fit_neuron(&train, &test, &cfg)?;
        println!(
            "{engine:>8}: test ETV {:.3} train ETV {:.3} loss {:.4} -> {:.4} over {} epochs in {:.2} s",
            r.test_etv,
            r.train_etv,
            r.loss_curve[0],
            r.best_loss,
            r.epochs,
            r.wall_secs
        );
        println!("          {:?}", r.params);
    }
    Ok(())
}
