//! Desk-scale surrogate modelling pipeline for travel demand: synthetic
//! network generation, a four-step labelling oracle, a small dense-tensor
//! autodiff substrate, GNN layers (GCN, GCNII, GATv2, GATv3), bucket
//! classification with expectation decoding, and training/evaluation tooling.

pub mod autodiff;
pub mod buckets;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod synthgen;
pub mod train;

pub use buckets::BucketSpec;
pub use dataset::{read_dataset, write_dataset, Dataset, Split};
pub use error::{CoreError, Result};
pub use graph::{
    graph_diameter, to_line_graph, LineGraphSample, RoadLink, RoadNetwork, RoadNode, ZoneInfo,
};
pub use layers::{LayerKind, ModelConfig, SurrogateModel};
pub use metrics::MetricsReport;
pub use oracle::{label_network, OracleParams};
pub use synthgen::SynthConfig;
pub use train::{Task, TrainConfig};
