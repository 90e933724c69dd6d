//! Trains a two-layer network to tell 20 Hz from 100 Hz Poisson inputs.

use refrax::data_io::two_rate_dataset;
use refrax::params::{NetConfig, Network};
use refrax::sim::Engine;
use refrax::train::{evaluate, train_classifier, TrainConfig};

fn main() -> refrax::Result<()> {
    let engine: Engine = std::env::args().nth(1).as_deref().unwrap_or("block").parse().map_err(refrax::Error::InvalidArgument)?;
    let train = two_rate_dataset(64, 32, 300, (20.0, 100.0), 1)?;
    let test = two_rate_dataset(64, 32, 300, (20.0, 100.0), 2)?;
    let mut net = Network::<f32>::init(NetConfig::new(32, vec![64, 64], 2, 1.0, 5), 0)?;
    let cfg = TrainConfig {
        engine,
        epochs: 200,
        batch_size: 16,
        stop_at_accuracy: Some(1.0),
        ..TrainConfig::default()
    };
    let out = train_classifier(&mut net, &train, &cfg, |e| {
        println!("epoch {:3}  loss {:.4}  acc {:.3}  {:.3}s", e.epoch, e.loss, e.accuracy, e.wall_secs)
    })?;
    let (loss, acc) = evaluate(&out.best, &test, engine, 64)?;
    println!("{engine}: held-out loss {loss:.4}, accuracy {acc:.3}");
    Ok(())
}
