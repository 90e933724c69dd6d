//! Times both engines at one shape and across refractory periods.

use refrax::bench::{bench_case, BenchMode, Case};

fn main() -> refrax::Result<()> {
    let base = Case {
        steps: 1024,
        arp: 40,
        batch: 64,
        width: 256,
        depth: 2,
    };
    for mode in [BenchMode::Forward, BenchMode::Train] {
        for arp in [1, 8, 16, 32, 40, 64] {
            let r = bench_case(&Case { arp, ..base }, mode, 3, 0)?;
            println!(
                "{mode:7} T_R={arp:2}  standard {:8.1} ms  block {:8.1} ms  speedup {:5.2}  stages {} / {}",
                r.standard_ms, r.block_ms, r.speedup, r.stages_standard, r.stages_block
            );
        }
    }
    Ok(())
}
