//! Shared fixtures for the criterion benchmarks.

use tdm_core::oracle::OracleParams;
use tdm_core::synthgen::{generate_sample_with_retries, SynthConfig};
use tdm_core::{label_network, LineGraphSample, RoadNetwork};

pub fn network(target_nodes: usize, seed: u64) -> RoadNetwork {
    let config = SynthConfig {
        target_nodes,
        seed,
        ..SynthConfig::default()
    };
    generate_sample_with_retries(&config, 10).expect("benchmark network generates")
}

pub fn labelled_sample(target_nodes: usize, seed: u64) -> LineGraphSample {
    let net = network(target_nodes, seed);
    label_network(&net, &OracleParams::default(), "bench").expect("benchmark network labels")
}
