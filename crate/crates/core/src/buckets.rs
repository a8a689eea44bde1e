//! Bucket strategies for flow classification and the expectation-based
//! decoding of bucket probabilities back into veh/h.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Ordered partition of the flow range into left-closed right-open intervals.
///
/// `edges` holds K+1 strictly increasing boundaries starting at 0; the final
/// edge closes the otherwise open-ended top interval so midpoints stay finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub name: String,
    pub edges: Vec<f64>,
}

pub const SPEC_NAMES: [&str; 8] = ["coarse3", "e23", "e45", "e90", "e180", "e450", "nl38", "nl54"];

impl BucketSpec {
    pub fn named(name: &str) -> Result<BucketSpec> {
        let edges = match name {
            "coarse3" => vec![0.0, 10.0, 500.0, 4500.0],
            "e23" => uniform_edges(23, 200.0),
            "e45" => uniform_edges(45, 100.0),
            "e90" => uniform_edges(90, 50.0),
            "e180" => uniform_edges(180, 25.0),
            "e450" => uniform_edges(450, 10.0),
            "nl38" => banded_edges(&[(25.0, 250.0), (50.0, 1000.0), (100.0, 1500.0), (500.0, 5500.0)]),
            "nl54" => banded_edges(&[(25.0, 500.0), (50.0, 1500.0), (100.0, 2000.0), (500.0, 6500.0)]),
            _ => return Err(CoreError::Domain(format!("unknown bucket spec '{name}'"))),
        };
        Ok(BucketSpec {
            name: name.to_string(),
            edges,
        })
    }

    pub fn num_buckets(&self) -> usize {
        self.edges.len() - 1
    }

    /// Top edge; values at or above it clamp into the last bucket.
    pub fn cap(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (self.edges[k] + self.edges[k + 1]) / 2.0
    }

    /// Bucket index `k` with `e_k <= value < e_{k+1}`.
    pub fn encode(&self, value: f64) -> Result<usize> {
        if !value.is_finite() || value < 0.0 {
            return Err(CoreError::Domain(format!("cannot bucket value {value}")));
        }
        if value >= self.cap() {
            return Ok(self.num_buckets() - 1);
        }
        // edges sorted; partition_point gives the first edge > value.
        let idx = self.edges.partition_point(|&e| e <= value);
        Ok(idx - 1)
    }

    /// Double-expectation decoding: uniform density within each bucket, then
    /// expectation under the given bucket probabilities.
    pub fn decode_expectation(&self, probs: &[f64]) -> Result<f64> {
        if probs.len() != self.num_buckets() {
            return Err(CoreError::Dimension(format!(
                "{} probabilities for {} buckets",
                probs.len(),
                self.num_buckets()
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|&p| !(-1e-9..=1.0 + 1e-9).contains(&p)) {
            return Err(CoreError::Domain(format!("probabilities not a simplex (sum {sum})")));
        }
        Ok(probs
            .iter()
            .enumerate()
            .map(|(k, &p)| p * self.midpoint(k))
            .sum())
    }
}

fn uniform_edges(k: usize, width: f64) -> Vec<f64> {
    (0..=k).map(|i| i as f64 * width).collect()
}

/// Bands of (width, upper bound); each band is tiled with buckets of the given
/// width up to its bound.
fn banded_edges(bands: &[(f64, f64)]) -> Vec<f64> {
    let mut edges = vec![0.0];
    for &(width, upper) in bands {
        let mut e = *edges.last().unwrap();
        while e + width <= upper + 1e-9 {
            e += width;
            edges.push(e);
        }
    }
    edges
}
