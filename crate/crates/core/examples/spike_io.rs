//! Writes and reads back a spike file and a parameter file.

use refrax::data_io::{gen_poisson, load_spkt, save_spkt, PoissonSpec};
use refrax::params::{NetConfig, Network};

fn main() -> refrax::Result<()> {
    let dir = std::env::temp_dir().join("refrax_spike_io");
    std::fs::create_dir_all(&dir)?;
    let spikes = gen_poisson(&PoissonSpec::new(4, 16, 500, 7))?;
    let path = dir.join("input.spkt");
    save_spkt(&path, &spikes)?;
    let back = load_spkt(&path)?;
    println!("{}: dims {:?}, {} spikes, identical {}", path.display(), back.dims(), back.count(), back == spikes);

    let net = Network::<f64>::init(NetConfig::new(16, vec![32], 3, 1.0, 4), 1)?;
    let params = dir.join("params.json");
    net.save(&params)?;
    let loaded = Network::<f64>::load(&params)?;
    println!("{}: identical {}", params.display(), loaded == net);
    Ok(())
}
