//! Batch dataset production: generate synthetic networks in parallel, label
//! them with the four-step oracle, and partition into train/val/test splits.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::buckets::BucketSpec;
use crate::dataset::{Dataset, Split};
use crate::error::{CoreError, Result};
use crate::graph::LineGraphSample;
use crate::oracle::{label_network, OracleParams};
use crate::synthgen::{generate_sample_with_retries, SynthConfig};

const SEED_STRIDE: u64 = 0x9E3779B97F4A7C15;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub synth: SynthConfig,
    pub oracle: OracleParams,
    /// Train/validation fractions; test takes the remainder.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for GenerationConfig {
    fn default() -> GenerationConfig {
        GenerationConfig {
            num_samples: 300,
            seed: 0,
            min_nodes: 15,
            max_nodes: 40,
            synth: SynthConfig::default(),
            oracle: OracleParams::default(),
            train_fraction: 0.70,
            val_fraction: 0.15,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(CoreError::Domain("num_samples must be positive".into()));
        }
        if self.min_nodes < 2 || self.max_nodes < self.min_nodes {
            return Err(CoreError::Domain(
                "need 2 <= min_nodes <= max_nodes".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.train_fraction)
            || !(0.0..1.0).contains(&self.val_fraction)
            || self.train_fraction + self.val_fraction >= 1.0
        {
            return Err(CoreError::Domain(
                "split fractions must be in (0,1) and sum below 1".into(),
            ));
        }
        Ok(())
    }
}

/// Generate and label one sample. The per-sample seed also picks the node
/// target uniformly in `[min_nodes, max_nodes]`.
pub fn generate_labelled_sample(config: &GenerationConfig, index: usize) -> Result<LineGraphSample> {
    let seed = config
        .seed
        .wrapping_add((index as u64).wrapping_mul(SEED_STRIDE));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let target = rng.gen_range(config.min_nodes..=config.max_nodes);
    let mut synth = config.synth.clone();
    synth.target_nodes = target;
    synth.seed = seed;
    let network = generate_sample_with_retries(&synth, 10)?;
    label_network(
        &network,
        &config.oracle,
        &format!("sample-{index:06}-seed-{seed}"),
    )
}

/// Generate the whole corpus in parallel and assign splits by a hash of each
/// sample's graph id, so the assignment is stable as the corpus grows.
pub fn generate_corpus(config: &GenerationConfig) -> Result<(Dataset, Dataset, Dataset)> {
    config.validate()?;
    let samples: Vec<LineGraphSample> = (0..config.num_samples)
        .into_par_iter()
        .map(|i| generate_labelled_sample(config, i))
        .collect::<Result<Vec<_>>>()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        match assign_split(&s.graph_id, config.train_fraction, config.val_fraction) {
            Split::Train => train.push(s),
            Split::Validation => val.push(s),
            Split::Test => test.push(s),
        }
    }
    Ok((
        Dataset::new(train, Split::Train),
        Dataset::new(val, Split::Validation),
        Dataset::new(test, Split::Test),
    ))
}

/// FNV-1a over the graph id with a splitmix64-style finisher (FNV alone
/// mixes too weakly on near-identical ids), mapped to [0,1).
fn id_fraction(graph_id: &str) -> f64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in graph_id.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash ^= hash >> 30;
    hash = hash.wrapping_mul(0xbf58476d1ce4e5b9);
    hash ^= hash >> 27;
    hash = hash.wrapping_mul(0x94d049bb133111eb);
    hash ^= hash >> 31;
    (hash >> 11) as f64 / (1u64 << 53) as f64
}

pub fn assign_split(graph_id: &str, train_fraction: f64, val_fraction: f64) -> Split {
    let x = id_fraction(graph_id);
    if x < train_fraction {
        Split::Train
    } else if x < train_fraction + val_fraction {
        Split::Validation
    } else {
        Split::Test
    }
}

/// Fraction of link-nodes falling into each bucket of a spec, across datasets.
pub fn bucket_distribution(datasets: &[&Dataset], spec: &BucketSpec) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; spec.num_buckets()];
    let mut total = 0usize;
    for ds in datasets {
        for s in &ds.samples {
            for &t in &s.target_flow {
                counts[spec.encode(t)?] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(CoreError::Domain("no link-nodes to summarize".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
