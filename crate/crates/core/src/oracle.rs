//! Simplified four-step travel demand model used as the labelling oracle:
//! trip generation, singly-constrained gravity distribution, and incremental
//! all-or-nothing assignment with BPR link delays. Single mode, hourly flows.

use crate::error::{CoreError, Result};
use crate::graph::{to_line_graph, LineGraphSample, RoadNetwork, ZoneInfo};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleParams {
    /// Trips per resident per hour.
    pub production_rate: f64,
    /// Trips per employee per hour (before balancing).
    pub attraction_rate: f64,
    /// Impedance decay per minute.
    pub gravity_beta: f64,
    pub bpr_alpha: f64,
    pub bpr_beta: f64,
    pub assignment_increments: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            production_rate: 0.5,
            attraction_rate: 0.5,
            gravity_beta: 0.05,
            bpr_alpha: 0.15,
            bpr_beta: 4.0,
            assignment_increments: 4,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if self.production_rate <= 0.0
            || self.attraction_rate <= 0.0
            || self.gravity_beta <= 0.0
            || self.assignment_increments == 0
        {
            return Err(CoreError::Domain("invalid oracle parameters".into()));
        }
        Ok(())
    }
}

/// Origin-destination demand in veh/h. Row sums equal productions.
#[derive(Debug, Clone, PartialEq)]
pub struct TripTable {
    pub productions: Vec<f64>,
    pub attractions: Vec<f64>,
    /// Row-major `[zones x zones]`.
    pub od: Vec<f64>,
}

impl TripTable {
    pub fn num_zones(&self) -> usize {
        self.productions.len()
    }

    pub fn od_at(&self, i: usize, j: usize) -> f64 {
        self.od[i * self.num_zones() + j]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_zones();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.od_at(i, j)).sum();
            let scale = self.productions[i].abs().max(1.0);
            if (row - self.productions[i]).abs() > 1e-9 * scale {
                return Err(CoreError::Domain(format!(
                    "od row {i} sums to {row}, production is {}",
                    self.productions[i]
                )));
            }
            if self.od_at(i, i) != 0.0 {
                return Err(CoreError::Domain(format!("nonzero od diagonal at {i}")));
            }
        }
        if self.od.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(CoreError::Domain("negative or non-finite od entry".into()));
        }
        Ok(())
    }
}

/// Stage 1: productions from residents, attractions from employees scaled so
/// both totals balance.
pub fn trip_generation(zones: &[ZoneInfo], params: &OracleParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if zones.len() < 2 {
        return Err(CoreError::Domain("need at least 2 zones".into()));
    }
    let productions: Vec<f64> = zones
        .iter()
        .map(|z| params.production_rate * z.residents as f64)
        .collect();
    let raw: Vec<f64> = zones
        .iter()
        .map(|z| params.attraction_rate * z.employees as f64)
        .collect();
    let total_p: f64 = productions.iter().sum();
    let total_a: f64 = raw.iter().sum();
    if total_a <= 0.0 {
        return Err(CoreError::Domain("all zones have zero employees; cannot balance".into()));
    }
    let scale = total_p / total_a;
    let attractions = raw.into_iter().map(|a| a * scale).collect();
    Ok((productions, attractions))
}

/// Stage 2: singly-constrained gravity model with exponential impedance.
pub fn gravity_distribution(
    productions: &[f64],
    attractions: &[f64],
    travel_time_min: &[f64],
    beta: f64,
) -> Result<TripTable> {
    let n = productions.len();
    if attractions.len() != n || travel_time_min.len() != n * n {
        return Err(CoreError::Dimension("gravity input shapes inconsistent".into()));
    }
    let mut od = vec![0.0; n * n];
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += attractions[j] * (-beta * travel_time_min[i * n + j]).exp();
            }
        }
        if productions[i] > 0.0 && denom <= 0.0 {
            return Err(CoreError::Domain(format!(
                "zone {i} produces trips but no destination is attainable"
            )));
        }
        if denom > 0.0 {
            for j in 0..n {
                if j != i {
                    od[i * n + j] = productions[i] * attractions[j]
                        * (-beta * travel_time_min[i * n + j]).exp()
                        / denom;
                }
            }
        }
    }
    let table = TripTable {
        productions: productions.to_vec(),
        attractions: attractions.to_vec(),
        od,
    };
    table.validate()?;
    Ok(table)
}

/// BPR volume-delay function.
pub fn bpr_time(t0_min: f64, volume: f64, capacity: f64, params: &OracleParams) -> f64 {
    t0_min * (1.0 + params.bpr_alpha * (volume / capacity).powf(params.bpr_beta))
}

/// Dijkstra over link travel times. Returns per-node (distance, predecessor
/// link). Ties resolve to the lowest node id via the scan order.
fn dijkstra(network: &RoadNetwork, times: &[f64], source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = network.nodes.len();
    let mut out_links = vec![Vec::new(); n];
    for l in &network.links {
        out_links[l.from].push(l.id);
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        let mut best = f64::INFINITY;
        for v in 0..n {
            if !done[v] && dist[v] < best {
                best = dist[v];
                u = v;
            }
        }
        if u == usize::MAX {
            break;
        }
        done[u] = true;
        for &lid in &out_links[u] {
            let l = &network.links[lid];
            let cand = dist[u] + times[lid];
            if cand < dist[l.to] {
                dist[l.to] = cand;
                pred[l.to] = Some(lid);
            }
        }
    }
    (dist, pred)
}

/// Free-flow shortest travel times (minutes) between the given nodes.
pub fn travel_time_matrix(network: &RoadNetwork, zone_nodes: &[usize]) -> Result<Vec<f64>> {
    let times: Vec<f64> = network.links.iter().map(|l| l.free_flow_minutes()).collect();
    let n = zone_nodes.len();
    let mut matrix = vec![0.0; n * n];
    for (i, &src) in zone_nodes.iter().enumerate() {
        let (dist, _) = dijkstra(network, &times, src);
        for (j, &dst) in zone_nodes.iter().enumerate() {
            if i != j {
                if !dist[dst].is_finite() {
                    return Err(CoreError::Domain(format!(
                        "zone node {dst} unreachable from {src}"
                    )));
                }
                matrix[i * n + j] = dist[dst];
            }
        }
    }
    Ok(matrix)
}

/// Stage 4: split demand into equal slices, assign each all-or-nothing on
/// current shortest paths, update link times with BPR after every slice.
pub fn incremental_assignment(
    network: &RoadNetwork,
    od: &TripTable,
    zone_nodes: &[usize],
    params: &OracleParams,
) -> Result<Vec<f64>> {
    od.validate()?;
    if od.num_zones() != zone_nodes.len() {
        return Err(CoreError::Dimension("od size != zone count".into()));
    }
    let n_zones = zone_nodes.len();
    let mut volumes = vec![0.0; network.links.len()];
    let free_flow: Vec<f64> = network.links.iter().map(|l| l.free_flow_minutes()).collect();
    let increments = params.assignment_increments;
    for _ in 0..increments {
        let times: Vec<f64> = network
            .links
            .iter()
            .map(|l| bpr_time(free_flow[l.id], volumes[l.id], l.capacity, params))
            .collect();
        for i in 0..n_zones {
            let any_demand = (0..n_zones).any(|j| od.od_at(i, j) > 0.0);
            if !any_demand {
                continue;
            }
            let (dist, pred) = dijkstra(network, &times, zone_nodes[i]);
            for j in 0..n_zones {
                let demand = od.od_at(i, j);
                if demand <= 0.0 {
                    continue;
                }
                if !dist[zone_nodes[j]].is_finite() {
                    return Err(CoreError::Domain(format!(
                        "od pair ({i}, {j}) has no route"
                    )));
                }
                let slice = demand / increments as f64;
                let mut node = zone_nodes[j];
                while node != zone_nodes[i] {
                    let lid = pred[node].expect("finite distance implies predecessor");
                    volumes[lid] += slice;
                    node = network.links[lid].from;
                }
            }
        }
    }
    Ok(volumes)
}

/// Run the full oracle on a generated network and transform the result into
/// the prediction graph with assigned volumes as targets.
pub fn label_network(
    network: &RoadNetwork,
    params: &OracleParams,
    graph_id: &str,
) -> Result<LineGraphSample> {
    params.validate()?;
    let zone_nodes = network.zone_nodes();
    let zones: Vec<ZoneInfo> = zone_nodes
        .iter()
        .map(|&i| network.nodes[i].zone.unwrap())
        .collect();
    let run = || -> Result<LineGraphSample> {
        let (productions, attractions) = trip_generation(&zones, params)?;
        let times = travel_time_matrix(network, &zone_nodes)?;
        let od = gravity_distribution(&productions, &attractions, &times, params.gravity_beta)?;
        let volumes = incremental_assignment(network, &od, &zone_nodes, params)?;
        to_line_graph(network, &volumes, graph_id)
    };
    run().map_err(|e| CoreError::SampleFailed(format!("oracle failed on {graph_id}: {e}")))
}
