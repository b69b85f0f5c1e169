//! Farm graph: directed k-nearest-neighbor edges under great-circle distance.
//!
//! Nodes are stored sorted by farm id and each node's neighbor list is kept
//! in farm-id order, so the structure (and everything computed from it) is
//! independent of the input ordering.

use super::frames::FarmMeta;
use crate::error::{Error, Result};

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance between (lat, lon) pairs in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Directed k-nearest-neighbor farm graph.
#[derive(Debug, Clone)]
pub struct WindFarmGraph {
    nodes: Vec<FarmMeta>,
    neighbors: Vec<Vec<usize>>,
    k: usize,
}

impl WindFarmGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node(&self, i: usize) -> &FarmMeta {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[FarmMeta] {
        &self.nodes
    }

    /// Index of a farm id, if present. Nodes are sorted by id.
    pub fn node_index(&self, farm_id: &str) -> Option<usize> {
        self.nodes
            .binary_search_by(|n| n.farm_id.as_str().cmp(farm_id))
            .ok()
    }

    /// Out-neighbors of `v` (its k nearest farms), in farm-id order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    /// Edge set keyed by farm id; input-order independent by construction.
    pub fn edge_set(&self) -> Vec<(String, String)> {
        let mut edges = Vec::new();
        for (u, ns) in self.neighbors.iter().enumerate() {
            for &v in ns {
                edges.push((
                    self.nodes[u].farm_id.clone(),
                    self.nodes[v].farm_id.clone(),
                ));
            }
        }
        edges
    }

    /// Undirected BFS hop distance from `from` to every node; `None` when
    /// unreachable.
    pub fn hop_distances(&self, from: usize) -> Vec<Option<usize>> {
        let n = self.node_count();
        let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, ns) in self.neighbors.iter().enumerate() {
            for &v in ns {
                undirected[u].push(v);
                undirected[v].push(u);
            }
        }
        let mut dist = vec![None; n];
        dist[from] = Some(0);
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &undirected[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Build the directed k-NN graph. Each node gets exactly `min(k, n-1)`
/// out-edges to its nearest farms by haversine distance, ties broken by
/// farm id. Duplicate farm ids are rejected.
pub fn build_graph(farms: &[FarmMeta], k: usize) -> Result<WindFarmGraph> {
    if farms.is_empty() {
        return Err(Error::invalid("graph needs at least one farm"));
    }
    for f in farms {
        f.validate()?;
    }
    let mut nodes = farms.to_vec();
    nodes.sort_by(|a, b| a.farm_id.cmp(&b.farm_id));
    for pair in nodes.windows(2) {
        if pair[0].farm_id == pair[1].farm_id {
            return Err(Error::invalid(format!(
                "duplicate farm id `{}`",
                pair[0].farm_id
            )));
        }
    }
    let n = nodes.len();
    let take = k.min(n - 1);
    let mut neighbors = Vec::with_capacity(n);
    for u in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&v| v != u).collect();
        others.sort_by(|&a, &b| {
            let da = haversine_km(
                (nodes[u].latitude, nodes[u].longitude),
                (nodes[a].latitude, nodes[a].longitude),
            );
            let db = haversine_km(
                (nodes[u].latitude, nodes[u].longitude),
                (nodes[b].latitude, nodes[b].longitude),
            );
            da.total_cmp(&db)
                .then_with(|| nodes[a].farm_id.cmp(&nodes[b].farm_id))
        });
        let mut chosen: Vec<usize> = others.into_iter().take(take).collect();
        chosen.sort_by(|&a, &b| nodes[a].farm_id.cmp(&nodes[b].farm_id));
        neighbors.push(chosen);
    }
    Ok(WindFarmGraph {
        nodes,
        neighbors,
        k,
    })
}
