mod common;

use common::{compare_engines, random_case};

#[test]
fn engines_agree_on_random_networks() {
    let mut total = common::Agreement::default();
    for seed in 0..200 {
        let a = compare_engines(&random_case(seed)).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        total.compared_steps += a.compared_steps;
        total.excluded_steps += a.excluded_steps;
        total.spikes += a.spikes;
    }
    assert!(total.spikes > 1000, "fuzzed networks barely spike: {total:?}");
    assert!(total.excluded_steps * 100 < total.compared_steps, "{total:?}");
}
