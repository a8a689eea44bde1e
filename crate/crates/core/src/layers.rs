//! GNN layers (GCN, GCNII, GATv2, GATv3) and assembly of the full surrogate
//! model: input projection, graph-layer stack with GraphNorm and dropout,
//! residual feed-forward head, and output layer.
//!
//! GATv3 extends GATv2 attention with an initial-residual term: each layer
//! blends the attention-aggregated projection with the layer-0 states using a
//! fixed mixing weight, which keeps deep stacks from over-smoothing.

use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::error::{CoreError, Result};
use crate::graph::{undirected_adjacency, LineGraphSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Gcnii { alpha: f64, theta: f64 },
    Gatv2 { heads: usize },
    /// GATv2 plus initial-residual mixing with fixed weight `alpha`.
    Gatv3 { alpha: f64, heads: usize },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Gcnii { .. } => "gcnii",
            LayerKind::Gatv2 { .. } => "gatv2",
            LayerKind::Gatv3 { .. } => "gatv3",
        }
    }

}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: LayerKind,
    /// Number of graph layers; 0 degenerates to an MLP on node features.
    pub depth: usize,
    pub hidden: usize,
    pub num_features: usize,
    /// Class count for classification, 1 for regression.
    pub num_outputs: usize,
    pub dropout: f64,
    pub use_graph_norm: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.num_outputs == 0 || self.num_features == 0 {
            return Err(CoreError::Domain("zero-sized model dimension".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Domain("dropout must be in [0, 1)".into()));
        }
        match self.kind {
            LayerKind::Gcnii { alpha, theta } => {
                if !(0.0..=1.0).contains(&alpha) || theta <= 0.0 {
                    return Err(CoreError::Domain("invalid GCNII hyperparameters".into()));
                }
            }
            LayerKind::Gatv3 { alpha, heads } => {
                if !(0.0..=1.0).contains(&alpha) || heads == 0 {
                    return Err(CoreError::Domain("invalid GATv3 hyperparameters".into()));
                }
            }
            LayerKind::Gatv2 { heads } => {
                if heads == 0 {
                    return Err(CoreError::Domain("heads must be >= 1".into()));
                }
            }
            LayerKind::Gcn => {}
        }
        Ok(())
    }

    /// Best GCNII configuration from the large-scale grid search. Runnable
    /// only at reduced width/depth on a desk machine.
    pub fn gcnii_best(num_features: usize, num_outputs: usize) -> ModelConfig {
        ModelConfig {
            kind: LayerKind::Gcnii { alpha: 0.1, theta: 1.5 },
            depth: 70,
            hidden: 512,
            num_features,
            num_outputs,
            dropout: 0.25,
            use_graph_norm: true,
            seed: 0,
        }
    }

    /// Best GATv3 configuration: 20 layers, 512 units, 2 averaged heads.
    pub fn gatv3_best(num_features: usize, num_outputs: usize) -> ModelConfig {
        ModelConfig {
            kind: LayerKind::Gatv3 { alpha: 0.1, heads: 2 },
            depth: 20,
            hidden: 512,
            num_features,
            num_outputs,
            dropout: 0.25,
            use_graph_norm: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Aggregation structure shared by all layer types: the candidate set
/// n(i) ∪ {i} over the undirected view of the prediction graph, flattened to
/// (source, destination) pairs grouped by destination.
#[derive(Debug, Clone)]
pub struct GraphStructure {
    pub num_nodes: usize,
    pub agg_src: Vec<usize>,
    pub agg_dst: Vec<usize>,
    /// 1 / |n(i) ∪ {i}| per node.
    pub inv_degree: Vec<f64>,
}

impl GraphStructure {
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> GraphStructure {
        let adj = undirected_adjacency(num_nodes, edges);
        let mut agg_src = Vec::new();
        let mut agg_dst = Vec::new();
        let mut inv_degree = Vec::with_capacity(num_nodes);
        for i in 0..num_nodes {
            agg_src.push(i);
            agg_dst.push(i);
            for &k in &adj[i] {
                agg_src.push(k);
                agg_dst.push(i);
            }
            inv_degree.push(1.0 / (adj[i].len() + 1) as f64);
        }
        GraphStructure {
            num_nodes,
            agg_src,
            agg_dst,
            inv_degree,
        }
    }

    pub fn from_sample(sample: &LineGraphSample) -> GraphStructure {
        GraphStructure::from_edges(sample.num_nodes, &sample.edges)
    }
}

/// Attention weights of one head of one layer, paired with the destination
/// node of each candidate edge.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub weights: Vec<f64>,
    pub destinations: Vec<usize>,
}

pub struct ForwardPass {
    pub output: TensorId,
    /// Tape ids of the model parameters, in declaration order.
    pub param_ids: Vec<TensorId>,
    pub attention: Vec<AttentionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

impl SurrogateModel {
    pub fn new(config: ModelConfig) -> Result<SurrogateModel> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let h = config.hidden;

        let weight = |name: String, rows: usize, cols: usize, rng: &mut ChaCha20Rng| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let values = (0..rows * cols)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            Param { name, rows, cols, values }
        };
        let fill = |name: String, rows: usize, cols: usize, v: f64| Param {
            name,
            rows,
            cols,
            values: vec![v; rows * cols],
        };

        params.push(weight("input_w".into(), config.num_features, h, &mut rng));
        params.push(fill("input_b".into(), 1, h, 0.0));
        for l in 0..config.depth {
            match config.kind {
                LayerKind::Gcn | LayerKind::Gcnii { .. } => {
                    params.push(weight(format!("layer{l}_w"), h, h, &mut rng));
                }
                LayerKind::Gatv2 { heads } | LayerKind::Gatv3 { heads, .. } => {
                    for hd in 0..heads {
                        params.push(weight(format!("layer{l}_head{hd}_att_w"), 2 * h, h, &mut rng));
                        params.push(weight(format!("layer{l}_head{hd}_att_a"), h, 1, &mut rng));
                        params.push(weight(format!("layer{l}_head{hd}_w"), h, h, &mut rng));
                    }
                }
            }
            if config.use_graph_norm {
                params.push(fill(format!("layer{l}_gn_alpha"), 1, h, 1.0));
                params.push(fill(format!("layer{l}_gn_gamma"), 1, h, 1.0));
                params.push(fill(format!("layer{l}_gn_beta"), 1, h, 0.0));
            }
        }
        for f in 0..3 {
            params.push(weight(format!("ff{f}_w"), h, h, &mut rng));
            params.push(fill(format!("ff{f}_b"), 1, h, 0.0));
        }
        params.push(weight("out_w".into(), h, config.num_outputs, &mut rng));
        params.push(fill("out_b".into(), 1, config.num_outputs, 0.0));

        Ok(SurrogateModel { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.values.len()).collect()
    }

    /// Build the full forward computation on `tape`. `features` must be
    /// `[num_nodes x num_features]` row-major.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: &[f64],
        structure: &GraphStructure,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<ForwardPass> {
        let n = structure.num_nodes;
        let f = self.config.num_features;
        if features.len() != n * f {
            return Err(CoreError::Dimension(format!(
                "feature matrix has {} values, model expects {n} x {f}",
                features.len()
            )));
        }
        let mut param_ids = Vec::with_capacity(self.params.len());
        for p in &self.params {
            param_ids.push(tape.param(p.values.clone(), p.rows, p.cols)?);
        }
        let mut cursor = 0usize;
        let mut next = |name_prefix: &str| -> TensorId {
            debug_assert!(
                self.params[cursor].name.starts_with(name_prefix)
                    || self.params[cursor].name.contains(name_prefix),
                "param order mismatch: {} vs {}",
                self.params[cursor].name,
                name_prefix
            );
            let id = param_ids[cursor];
            cursor += 1;
            id
        };

        let x = tape.constant(features.to_vec(), n, f)?;
        let input_w = next("input_w");
        let input_b = next("input_b");
        let proj = tape.matmul(x, input_w)?;
        let h0 = tape.channel_add(proj, input_b)?;

        let graph_ids = vec![0usize; n];
        let inv_deg = tape.constant(structure.inv_degree.clone(), n, 1)?;
        let mut attention = Vec::new();
        let mut h = h0;
        for l in 0..self.config.depth {
            h = match self.config.kind {
                LayerKind::Gcn => {
                    let w = next("_w");
                    let agg = Self::mean_aggregate(tape, h, structure, inv_deg)?;
                    let proj = tape.matmul(agg, w)?;
                    tape.relu(proj)?
                }
                LayerKind::Gcnii { alpha, theta } => {
                    let w = next("_w");
                    let beta_l = (theta / (l + 1) as f64 + 1.0).ln();
                    let agg = Self::mean_aggregate(tape, h, structure, inv_deg)?;
                    let smooth = tape.scale(agg, 1.0 - alpha)?;
                    let residual = tape.scale(h0, alpha)?;
                    let p = tape.add(smooth, residual)?;
                    let identity = tape.scale(p, 1.0 - beta_l)?;
                    let mapped = tape.matmul(p, w)?;
                    let mapped = tape.scale(mapped, beta_l)?;
                    let combined = tape.add(identity, mapped)?;
                    tape.relu(combined)?
                }
                LayerKind::Gatv2 { heads } => {
                    self.attention_layer(tape, h, h0, structure, heads, 0.0, l, &mut next, &mut attention)?
                }
                LayerKind::Gatv3 { alpha, heads } => {
                    self.attention_layer(tape, h, h0, structure, heads, alpha, l, &mut next, &mut attention)?
                }
            };
            if self.config.use_graph_norm {
                let gn_alpha = next("_gn_alpha");
                let gn_gamma = next("_gn_gamma");
                let gn_beta = next("_gn_beta");
                h = tape.graph_norm(h, &graph_ids, gn_alpha, gn_gamma, gn_beta)?;
            }
            h = tape.dropout(h, self.config.dropout, training, rng)?;
        }

        for _ in 0..3 {
            let w = next("ff");
            let b = next("ff");
            let lin = tape.matmul(h, w)?;
            let lin = tape.channel_add(lin, b)?;
            let act = tape.relu(lin)?;
            h = tape.add(h, act)?;
        }

        let out_w = next("out_w");
        let out_b = next("out_b");
        let out = tape.matmul(h, out_w)?;
        let output = tape.channel_add(out, out_b)?;
        Ok(ForwardPass {
            output,
            param_ids,
            attention,
        })
    }

    fn mean_aggregate(
        tape: &mut Tape,
        h: TensorId,
        structure: &GraphStructure,
        inv_deg: TensorId,
    ) -> Result<TensorId> {
        let gathered = tape.gather_rows(h, &structure.agg_src)?;
        let summed = tape.segment_sum(gathered, &structure.agg_dst, structure.num_nodes)?;
        tape.row_scale(summed, inv_deg)
    }

    /// One GATv2/GATv3 layer: per-head attention over n(i) ∪ {i}, aggregated
    /// states projected by the head weight, blended with the initial states
    /// (weight `alpha`, zero for GATv2), activated, heads averaged.
    #[allow(clippy::too_many_arguments)]
    fn attention_layer(
        &self,
        tape: &mut Tape,
        h: TensorId,
        h0: TensorId,
        structure: &GraphStructure,
        heads: usize,
        alpha: f64,
        layer: usize,
        next: &mut impl FnMut(&str) -> TensorId,
        attention: &mut Vec<AttentionRecord>,
    ) -> Result<TensorId> {
        let mut merged: Option<TensorId> = None;
        for head in 0..heads {
            let att_w = next("_att_w");
            let att_a = next("_att_a");
            let w = next("_w");
            let src_states = tape.gather_rows(h, &structure.agg_src)?;
            let dst_states = tape.gather_rows(h, &structure.agg_dst)?;
            let pair = tape.concat_cols(src_states, dst_states)?;
            let hidden = tape.matmul(pair, att_w)?;
            let hidden = tape.leaky_relu(hidden, 0.2)?;
            let scores = tape.matmul(hidden, att_a)?;
            let att = tape.segment_softmax(scores, &structure.agg_dst)?;
            attention.push(AttentionRecord {
                layer,
                head,
                weights: tape.values(att).to_vec(),
                destinations: structure.agg_dst.clone(),
            });
            let weighted = tape.row_scale(src_states, att)?;
            let aggregated = tape.segment_sum(weighted, &structure.agg_dst, structure.num_nodes)?;
            let projected = tape.matmul(aggregated, w)?;
            let smooth = tape.scale(projected, 1.0 - alpha)?;
            let residual = tape.scale(h0, alpha)?;
            let combined = tape.add(smooth, residual)?;
            let activated = tape.relu(combined)?;
            merged = Some(match merged {
                None => activated,
                Some(acc) => tape.add(acc, activated)?,
            });
        }
        let sum = merged.expect("heads >= 1");
        tape.scale(sum, 1.0 / heads as f64)
    }

    /// Evaluation-mode forward returning raw outputs row-major.
    pub fn predict(&self, sample: &LineGraphSample) -> Result<Vec<f64>> {
        let structure = GraphStructure::from_sample(sample);
        let mut tape = Tape::new();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let pass = self.forward(&mut tape, &sample.features, &structure, false, &mut rng)?;
        Ok(tape.values(pass.output).to_vec())
    }

    pub fn set_values(&mut self, flat: &[Vec<f64>]) {
        for (p, v) in self.params.iter_mut().zip(flat) {
            p.values.clone_from(v);
        }
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.values.clone()).collect()
    }

    /// Save as a one-line JSON header (config + parameter metadata) followed
    /// by all parameter values as little-endian f64 in declaration order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let header = CheckpointHeader {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.rows, p.cols))
                .collect(),
        };
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n")?;
        let mut buf = Vec::new();
        for p in &self.params {
            for &v in &p.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SurrogateModel> {
        let mut file = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CoreError::Parse {
                line: 1,
                message: "checkpoint missing header line".into(),
            })?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| CoreError::Parse {
                line: 1,
                message: e.to_string(),
            })?;
        let mut offset = newline + 1;
        let mut params = Vec::new();
        for (name, rows, cols) in header.params {
            let len = rows * cols;
            let end = offset + len * 8;
            if end > bytes.len() {
                return Err(CoreError::Parse {
                    line: 2,
                    message: "checkpoint truncated".into(),
                });
            }
            let values = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(Param { name, rows, cols, values });
            offset = end;
        }
        let model = SurrogateModel {
            config: header.config,
            params,
        };
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    params: Vec<(String, usize, usize)>,
}
