//! Road-network data model and the transform into the link-level prediction
//! graph (links-as-nodes, U-turn adjacency excluded).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Region scale: unit-square coordinates map to a 30 km metropolitan extent.
pub const REGION_SCALE_KM: f64 = 30.0;

/// Per-link feature columns of the prediction graph, in order.
pub const FEATURE_SCHEMA: [&str; 9] = [
    "length_km",
    "capacity_veh_h",
    "free_flow_kmh",
    "tail_residents",
    "tail_employees",
    "head_residents",
    "head_employees",
    "tail_is_zone",
    "head_is_zone",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneInfo {
    pub residents: u32,
    pub employees: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub zone: Option<ZoneInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadLink {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
    pub capacity: f64,
    pub free_flow_kmh: f64,
}

impl RoadLink {
    /// Free-flow traversal time in minutes.
    pub fn free_flow_minutes(&self) -> f64 {
        self.length_km / self.free_flow_kmh * 60.0
    }
}

/// Planar directed road graph with zonal nodes carrying residents/employees.
///
/// Node ids are dense indices into `nodes`; link ids index `links`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: Vec<RoadNode>,
    pub links: Vec<RoadLink>,
}

impl RoadNetwork {
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(CoreError::Domain(format!("node id {} at index {i}", n.id)));
            }
            if !(0.0..=1.0).contains(&n.x) || !(0.0..=1.0).contains(&n.y) {
                return Err(CoreError::Domain(format!(
                    "node {} outside unit square: ({}, {})",
                    n.id, n.x, n.y
                )));
            }
            if let Some(z) = n.zone {
                if z.residents + z.employees == 0 {
                    return Err(CoreError::Domain(format!("zonal node {} is empty", n.id)));
                }
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            if l.id != i {
                return Err(CoreError::Domain(format!("link id {} at index {i}", l.id)));
            }
            if l.from >= self.nodes.len() || l.to >= self.nodes.len() {
                return Err(CoreError::Domain(format!("link {} endpoint out of range", l.id)));
            }
            if l.length_km <= 0.0 || l.capacity <= 0.0 || l.free_flow_kmh <= 0.0 {
                return Err(CoreError::Domain(format!("link {} has non-positive attribute", l.id)));
            }
        }
        Ok(())
    }

    /// Indices of nodes that carry zonal information.
    pub fn zone_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.zone.is_some())
            .map(|n| n.id)
            .collect()
    }

    /// Whether the network is weakly connected (isolated nodes excluded only
    /// if `skip_isolated` is set).
    pub fn is_weakly_connected(&self, skip_isolated: bool) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for l in &self.links {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let has_link: Vec<bool> = (0..n).map(|i| !adj[i].is_empty()).collect();
        let start = match (0..n).find(|&i| has_link[i] || !skip_isolated) {
            Some(s) => s,
            None => return false,
        };
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        (0..n).all(|i| seen[i] || (skip_isolated && !has_link[i]))
    }
}

/// Link-level prediction graph: one node per directed road link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineGraphSample {
    pub graph_id: String,
    pub num_nodes: usize,
    /// Row-major `[num_nodes x num_features]`.
    pub features: Vec<f64>,
    pub num_features: usize,
    /// Directed pairs `(i, j)`: link i's head node equals link j's tail node.
    pub edges: Vec<(usize, usize)>,
    /// Assigned flow per link in veh/h.
    pub target_flow: Vec<f64>,
    pub source_num_road_nodes: usize,
}

impl LineGraphSample {
    pub fn feature(&self, node: usize, col: usize) -> f64 {
        self.features[node * self.num_features + col]
    }

    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.features[node * self.num_features..(node + 1) * self.num_features]
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.num_nodes * self.num_features {
            return Err(CoreError::Dimension(format!(
                "features length {} != {} x {}",
                self.features.len(),
                self.num_nodes,
                self.num_features
            )));
        }
        if self.target_flow.len() != self.num_nodes {
            return Err(CoreError::Dimension("target_flow length mismatch".into()));
        }
        for &t in &self.target_flow {
            if !t.is_finite() || t < 0.0 {
                return Err(CoreError::Domain(format!("invalid target flow {t}")));
            }
        }
        for &f in &self.features {
            if !f.is_finite() {
                return Err(CoreError::Domain("non-finite feature".into()));
            }
        }
        for &(i, j) in &self.edges {
            if i == j {
                return Err(CoreError::Domain(format!("self-pair edge ({i}, {j})")));
            }
            if i >= self.num_nodes || j >= self.num_nodes {
                return Err(CoreError::Domain(format!("edge ({i}, {j}) out of range")));
            }
        }
        Ok(())
    }
}

/// Transform a road network plus per-link flows into the prediction graph.
///
/// Edge `(i, j)` is present iff `head(i) == tail(j)` and `j` is not the exact
/// reverse of `i` (no U-turn continuation). Zonal feature columns are 0 when
/// the endpoint carries no zone.
pub fn to_line_graph(network: &RoadNetwork, flows: &[f64], graph_id: &str) -> Result<LineGraphSample> {
    if flows.len() != network.links.len() {
        return Err(CoreError::Dimension(format!(
            "flow vector length {} != link count {}",
            flows.len(),
            network.links.len()
        )));
    }
    let num_nodes = network.links.len();
    let nf = FEATURE_SCHEMA.len();
    let mut features = Vec::with_capacity(num_nodes * nf);
    for l in &network.links {
        let tail = &network.nodes[l.from];
        let head = &network.nodes[l.to];
        let (tr, te) = tail.zone.map_or((0.0, 0.0), |z| (z.residents as f64, z.employees as f64));
        let (hr, he) = head.zone.map_or((0.0, 0.0), |z| (z.residents as f64, z.employees as f64));
        features.extend_from_slice(&[
            l.length_km,
            l.capacity,
            l.free_flow_kmh,
            tr,
            te,
            hr,
            he,
            tail.zone.is_some() as u8 as f64,
            head.zone.is_some() as u8 as f64,
        ]);
    }

    // Outgoing links grouped by tail node.
    let mut out_by_tail = vec![Vec::new(); network.nodes.len()];
    for l in &network.links {
        out_by_tail[l.from].push(l.id);
    }
    let mut edges = Vec::new();
    for l in &network.links {
        for &j in &out_by_tail[l.to] {
            let succ = &network.links[j];
            let is_reverse = succ.from == l.to && succ.to == l.from;
            if l.id != j && !is_reverse {
                edges.push((l.id, j));
            }
        }
    }

    let sample = LineGraphSample {
        graph_id: graph_id.to_string(),
        num_nodes,
        features,
        num_features: nf,
        edges,
        target_flow: flows.to_vec(),
        source_num_road_nodes: network.nodes.len(),
    };
    sample.validate()?;
    Ok(sample)
}

/// Maximum shortest-path hop count over node pairs of the largest connected
/// component, treating edges as undirected.
pub fn graph_diameter(sample: &LineGraphSample) -> Result<usize> {
    if sample.num_nodes == 0 {
        return Err(CoreError::Domain("empty graph has no diameter".into()));
    }
    let adj = undirected_adjacency(sample.num_nodes, &sample.edges);

    // Largest component first.
    let mut comp = vec![usize::MAX; sample.num_nodes];
    let mut n_comp = 0;
    for s in 0..sample.num_nodes {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = n_comp;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = n_comp;
                    stack.push(w);
                }
            }
        }
        n_comp += 1;
    }
    let mut sizes = vec![0usize; n_comp];
    for &c in &comp {
        sizes[c] += 1;
    }
    let largest = sizes
        .iter()
        .enumerate()
        .max_by_key(|&(_, s)| *s)
        .map(|(c, _)| c)
        .unwrap();

    let mut diameter = 0;
    for s in 0..sample.num_nodes {
        if comp[s] != largest {
            continue;
        }
        let dist = bfs_distances(&adj, s);
        for (v, &d) in dist.iter().enumerate() {
            if comp[v] == largest && d != usize::MAX {
                diameter = diameter.max(d);
            }
        }
    }
    Ok(diameter)
}

pub(crate) fn undirected_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    for nb in &mut adj {
        nb.sort_unstable();
        nb.dedup();
    }
    adj
}

pub(crate) fn bfs_distances(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}
