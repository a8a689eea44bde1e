//! Dataset container and line-delimited JSON serialization.
//!
//! File layout: line 1 is a JSON header `{"feature_schema": [...], "split": "..."}`,
//! every following line is one sample object. Floats round-trip bit-exact.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{LineGraphSample, FEATURE_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LineGraphSample>,
    pub split: Split,
    pub feature_schema: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<LineGraphSample>, split: Split) -> Self {
        Dataset {
            samples,
            split,
            feature_schema: FEATURE_SCHEMA.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nf = self.feature_schema.len();
        for s in &self.samples {
            s.validate()?;
            if s.num_features != nf {
                return Err(CoreError::Schema(format!(
                    "sample {} has {} features, schema has {nf}",
                    s.graph_id, s.num_features
                )));
            }
        }
        Ok(())
    }

    /// Training split = self plus another dataset's samples (the
    /// supplementary-data protocol). Schemas must match.
    pub fn union(mut self, other: Dataset) -> Result<Dataset> {
        if self.feature_schema != other.feature_schema {
            return Err(CoreError::Schema("cannot union datasets with different schemas".into()));
        }
        self.samples.extend(other.samples);
        Ok(self)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    feature_schema: Vec<String>,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    graph_id: String,
    num_nodes: usize,
    features: Vec<f64>,
    edges: Vec<[usize; 2]>,
    target_flow: Vec<f64>,
    source_num_road_nodes: usize,
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        feature_schema: dataset.feature_schema.clone(),
        split: dataset.split,
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for s in &dataset.samples {
        let rec = SampleRecord {
            graph_id: s.graph_id.clone(),
            num_nodes: s.num_nodes,
            features: s.features.clone(),
            edges: s.edges.iter().map(|&(i, j)| [i, j]).collect(),
            target_flow: s.target_flow.clone(),
            source_num_road_nodes: s.source_num_road_nodes,
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or_else(|| CoreError::Parse {
        line: 1,
        message: "missing header line".into(),
    })??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| CoreError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let nf = header.feature_schema.len();
    let mut samples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: idx + 2,
            message: e.to_string(),
        })?;
        let sample = LineGraphSample {
            graph_id: rec.graph_id,
            num_nodes: rec.num_nodes,
            features: rec.features,
            num_features: nf,
            edges: rec.edges.iter().map(|&[i, j]| (i, j)).collect(),
            target_flow: rec.target_flow,
            source_num_road_nodes: rec.source_num_road_nodes,
        };
        sample.validate().map_err(|e| CoreError::Parse {
            line: idx + 2,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    let dataset = Dataset {
        samples,
        split: header.split,
        feature_schema: header.feature_schema,
    };
    Ok(dataset)
}
