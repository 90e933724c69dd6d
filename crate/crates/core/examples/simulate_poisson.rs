//! Runs one network on Poisson input with both engines and compares them.

use refrax::data_io::{gen_poisson, PoissonSpec};
use refrax::params::{NetConfig, Network};
use refrax::{simulate, Engine, Input, SimConfig};

fn main() -> refrax::Result<()> {
    let input = gen_poisson(&PoissonSpec::new(8, 64, 1000, 0).with_rates(50.0, 200.0))?;
    let mut net = Network::<f64>::init(NetConfig::new(64, vec![128, 128], 0, 1.0, 10), 0)?;
    for l in &mut net.layers {
        l.b.iter_mut().for_each(|b| *b = 1.5);
    }
    let standard = simulate(&net, Input::Spikes(&input), &SimConfig::new(Engine::Standard))?;
    let block = simulate(&net, Input::Spikes(&input), &SimConfig::new(Engine::Block))?;
    for (name, r) in [("standard", &standard), ("block", &block)] {
        let counts: Vec<usize> = r.spikes.iter().map(|s| s.count()).collect();
        println!("{name:>8}: stages per layer {:?}, spikes per layer {counts:?}", r.stages);
    }
    println!("identical spikes: {}", standard.spikes == block.spikes);
    Ok(())
}
