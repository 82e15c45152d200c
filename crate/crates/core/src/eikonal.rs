//! Graph Eikonal solve: activation times as multi-source shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    ConductionVelocities, FiberFrame, GeometryError, MeshGraph, NodeLabel, Part, TetMesh, Topology,
};

#[derive(Debug, Error, PartialEq)]
pub enum EikonalError {
    #[error("node {node} is unreachable from every root")]
    Unreachable { node: usize },
    #[error("source node {node} out of range ({n_nodes} nodes)")]
    SourceOutOfRange { node: usize, n_nodes: usize },
    #[error("invalid onset time {time} at node {node}")]
    BadOnset { node: usize, time: f64 },
    #[error("edge weight {weight} at edge {edge} is not positive and finite")]
    BadWeight { edge: usize, weight: f64 },
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("root set: {0}")]
    Roots(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A source of activation: `node` fires at `time` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Onset {
    pub node: usize,
    pub time: f64,
}

pub const N_LV_ROOTS: usize = 4;
pub const N_RV_ROOTS: usize = 3;
pub const N_ROOTS: usize = N_LV_ROOTS + N_RV_ROOTS;

/// Seven earliest-activation sites: four LV endocardial nodes followed by three RV ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootNodeSet {
    nodes: [usize; N_ROOTS],
    onsets: [f64; N_ROOTS],
}

impl RootNodeSet {
    pub fn new(mesh: &TetMesh, nodes: [usize; N_ROOTS]) -> Result<Self, EikonalError> {
        Self::with_onsets(mesh, nodes, [0.0; N_ROOTS])
    }

    pub fn with_onsets(
        mesh: &TetMesh,
        nodes: [usize; N_ROOTS],
        onsets: [f64; N_ROOTS],
    ) -> Result<Self, EikonalError> {
        let set = RootNodeSet { nodes, onsets };
        set.check(mesh)?;
        Ok(set)
    }

    pub fn check(&self, mesh: &TetMesh) -> Result<(), EikonalError> {
        for (k, (&node, &time)) in self.nodes.iter().zip(&self.onsets).enumerate() {
            if node >= mesh.n_nodes() {
                return Err(EikonalError::SourceOutOfRange {
                    node,
                    n_nodes: mesh.n_nodes(),
                });
            }
            if !(time >= 0.0 && time.is_finite()) {
                return Err(EikonalError::BadOnset { node, time });
            }
            let expected = Self::part_of(k).endo_label();
            if mesh.node_labels()[node] != expected {
                return Err(EikonalError::Roots(format!(
                    "root {k} (node {node}) is {:?}, expected {expected:?}",
                    mesh.node_labels()[node]
                )));
            }
        }
        Ok(())
    }

    /// Ventricle of the `k`-th root in the fixed ordering.
    pub fn part_of(k: usize) -> Part {
        if k < N_LV_ROOTS {
            Part::Lv
        } else {
            Part::Rv
        }
    }

    pub fn nodes(&self) -> &[usize; N_ROOTS] {
        &self.nodes
    }

    pub fn onsets(&self) -> Vec<Onset> {
        self.nodes
            .iter()
            .zip(&self.onsets)
            .map(|(&node, &time)| Onset { node, time })
            .collect()
    }

    pub fn with_node(&self, k: usize, node: usize) -> RootNodeSet {
        let mut out = self.clone();
        out.nodes[k] = node;
        out
    }

    /// Endocardial label required at every root position.
    pub fn expected_label(k: usize) -> NodeLabel {
        Self::part_of(k).endo_label()
    }
}

/// Per-node activation time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTimeMap {
    pub times: Vec<f64>,
    /// Nodes settled by the solver.
    pub visited: usize,
    pub max_time: f64,
}

impl ActivationTimeMap {
    pub fn from_times(times: Vec<f64>) -> Self {
        let max_time = times.iter().copied().fold(0.0, f64::max);
        ActivationTimeMap {
            visited: times.len(),
            times,
            max_time,
        }
    }

    pub fn shifted(&self, dt: f64) -> Self {
        Self::from_times(self.times.iter().map(|t| t + dt).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_index,activation_time_s\n");
        for (i, t) in self.times.iter().enumerate() {
            let _ = writeln!(out, "{i},{t}");
        }
        out
    }

    /// Parses [`ActivationTimeMap::to_csv`] output, skipping `#` lines.
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        match lines.next() {
            Some("node_index,activation_time_s") => {}
            other => return Err(format!("unexpected header {other:?}")),
        }
        let mut times = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (idx, t) = line
                .split_once(',')
                .ok_or_else(|| format!("row {row}: expected two columns"))?;
            let idx: usize = idx.trim().parse().map_err(|e| format!("row {row}: {e}"))?;
            if idx != times.len() {
                return Err(format!("row {row}: node index {idx} out of order"));
            }
            times.push(
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("row {row}: {e}"))?,
            );
        }
        Ok(Self::from_times(times))
    }
}

/// Adjacency plus one traversal time per edge.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub topology: Topology,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl WeightedGraph {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>, weights: Vec<f64>) -> Self {
        let topology = Topology::from_edges(n_nodes, edges.iter().copied());
        WeightedGraph {
            topology,
            edges,
            weights,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed: BinaryHeap pops the earliest time, then the lowest node index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_inputs(
    n_nodes: usize,
    n_edges: usize,
    weights: &[f64],
    sources: &[Onset],
) -> Result<(), EikonalError> {
    if weights.len() != n_edges {
        return Err(EikonalError::WeightCount {
            expected: n_edges,
            got: weights.len(),
        });
    }
    if let Some((edge, &weight)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w > 0.0))
    {
        return Err(EikonalError::BadWeight { edge, weight });
    }
    for s in sources {
        if s.node >= n_nodes {
            return Err(EikonalError::SourceOutOfRange {
                node: s.node,
                n_nodes,
            });
        }
        if !(s.time >= 0.0 && s.time.is_finite()) {
            return Err(EikonalError::BadOnset {
                node: s.node,
                time: s.time,
            });
        }
    }
    Ok(())
}

/// Multi-source Dijkstra. All sources enter the heap at their onset times.
pub fn shortest_times(
    topology: &Topology,
    weights: &[f64],
    sources: &[Onset],
) -> Result<ActivationTimeMap, EikonalError> {
    let n = topology.n_nodes();
    let n_edges = topology.n_edges();
    check_inputs(n, n_edges, weights, sources)?;

    let mut times = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::with_capacity(n);
    for s in sources {
        if s.time < times[s.node] {
            times[s.node] = s.time;
        }
    }
    for s in sources {
        heap.push(Entry {
            time: times[s.node],
            node: s.node,
        });
    }
    let mut visited = 0;
    while let Some(Entry { time, node }) = heap.pop() {
        if done[node] || time > times[node] {
            continue;
        }
        done[node] = true;
        visited += 1;
        for &(next, edge) in topology.neighbors(node) {
            if done[next] {
                continue;
            }
            let candidate = time + weights[edge];
            if candidate < times[next] {
                times[next] = candidate;
                heap.push(Entry {
                    time: candidate,
                    node: next,
                });
            }
        }
    }
    if let Some(node) = times.iter().position(|t| !t.is_finite()) {
        return Err(EikonalError::Unreachable { node });
    }
    let max_time = times.iter().copied().fold(0.0, f64::max);
    Ok(ActivationTimeMap {
        times,
        visited,
        max_time,
    })
}

/// Activation map of a mesh for the given velocities and roots.
pub fn solve_activation(
    graph: &MeshGraph,
    cv: &ConductionVelocities,
    frame: &FiberFrame,
    roots: &RootNodeSet,
) -> Result<ActivationTimeMap, EikonalError> {
    let weights = graph.edge_weights(frame, cv)?;
    shortest_times(graph.topology(), &weights, &roots.onsets())
}

/// Reference solve by `|V| - 1` rounds of Bellman-Ford relaxation.
pub fn oracle_bellman_ford(
    n_nodes: usize,
    edges: &[(usize, usize)],
    weights: &[f64],
    sources: &[Onset],
) -> Result<ActivationTimeMap, EikonalError> {
    check_inputs(n_nodes, edges.len(), weights, sources)?;
    let mut times = vec![f64::INFINITY; n_nodes];
    for s in sources {
        times[s.node] = times[s.node].min(s.time);
    }
    for _ in 1..n_nodes.max(1) {
        let mut changed = false;
        for (&(i, j), &w) in edges.iter().zip(weights) {
            if times[i] + w < times[j] {
                times[j] = times[i] + w;
                changed = true;
            }
            if times[j] + w < times[i] {
                times[i] = times[j] + w;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(node) = times.iter().position(|t| !t.is_finite()) {
        return Err(EikonalError::Unreachable { node });
    }
    Ok(ActivationTimeMap::from_times(times))
}

/// Binary transmembrane state at time `t`: 1 where the node has activated.
pub fn activation_indicator(atm: &ActivationTimeMap, t: f64) -> Vec<u8> {
    atm.times.iter().map(|&ti| u8::from(ti <= t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> WeightedGraph {
        WeightedGraph::new(3, vec![(0, 1), (1, 2)], vec![1.0 / 100.0; 2])
    }

    #[test]
    fn path_graph_times() {
        let g = path3();
        let atm = shortest_times(&g.topology, &g.weights, &[Onset { node: 0, time: 0.0 }]).unwrap();
        assert_eq!(atm.times, vec![0.0, 0.01, 0.02]);
        assert_eq!(atm.visited, 3);
        assert_eq!(atm.max_time, 0.02);
    }

    #[test]
    fn doubling_speed_halves_times() {
        let g = path3();
        let fast: Vec<f64> = g.weights.iter().map(|w| w / 2.0).collect();
        let src = [Onset { node: 0, time: 0.0 }];
        let slow = shortest_times(&g.topology, &g.weights, &src).unwrap();
        let quick = shortest_times(&g.topology, &fast, &src).unwrap();
        for (a, b) in slow.times.iter().zip(&quick.times) {
            assert_eq!(a / 2.0, *b);
        }
    }

    #[test]
    fn oracle_single_node() {
        let atm = oracle_bellman_ford(1, &[], &[], &[Onset { node: 0, time: 0.0 }]).unwrap();
        assert_eq!(atm.times, vec![0.0]);
    }

    #[test]
    fn two_roots_meet_in_the_middle() {
        let edges = vec![(0, 1), (1, 2)];
        let w = vec![0.5, 0.5];
        let src = [Onset { node: 0, time: 0.0 }, Onset { node: 2, time: 0.0 }];
        let bf = oracle_bellman_ford(3, &edges, &w, &src).unwrap();
        assert_eq!(bf.times, vec![0.0, 0.5, 0.0]);
        let g = WeightedGraph::new(3, edges, w);
        assert_eq!(
            shortest_times(&g.topology, &g.weights, &src).unwrap().times,
            bf.times
        );
    }

    #[test]
    fn unreachable_node_is_named() {
        let g = WeightedGraph::new(4, vec![(0, 1), (2, 3)], vec![1.0, 1.0]);
        let err = shortest_times(&g.topology, &g.weights, &[Onset { node: 0, time: 0.0 }]);
        assert_eq!(err.unwrap_err(), EikonalError::Unreachable { node: 2 });
    }

    #[test]
    fn onset_times_are_respected() {
        let g = path3();
        let src = [
            Onset { node: 0, time: 0.0 },
            Onset {
                node: 2,
                time: 0.005,
            },
        ];
        let atm = shortest_times(&g.topology, &g.weights, &src).unwrap();
        assert_eq!(atm.times, vec![0.0, 0.01, 0.005]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = path3();
        assert!(matches!(
            shortest_times(&g.topology, &[0.01, -1.0], &[Onset { node: 0, time: 0.0 }]),
            Err(EikonalError::BadWeight { edge: 1, .. })
        ));
        assert!(matches!(
            shortest_times(&g.topology, &g.weights, &[Onset { node: 5, time: 0.0 }]),
            Err(EikonalError::SourceOutOfRange { node: 5, .. })
        ));
        assert!(matches!(
            shortest_times(
                &g.topology,
                &g.weights,
                &[Onset {
                    node: 0,
                    time: -1.0
                }]
            ),
            Err(EikonalError::BadOnset { .. })
        ));
    }

    #[test]
    fn indicator_thresholds() {
        let atm = ActivationTimeMap::from_times(vec![0.0, 0.01, 0.02, 0.0, 0.015]);
        assert_eq!(activation_indicator(&atm, 0.0), vec![1, 0, 0, 1, 0]);
        assert_eq!(activation_indicator(&atm, 1.0), vec![1; 5]);
        let mut sorted = atm.times.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let count = atm.times.iter().filter(|&&t| t <= median).count();
        let pop: usize = activation_indicator(&atm, median)
            .iter()
            .map(|&v| v as usize)
            .sum();
        assert_eq!(pop, count);
    }

    #[test]
    fn csv_round_trip() {
        let atm = ActivationTimeMap::from_times(vec![0.0, 0.0123456789, 0.5]);
        let text = atm.to_csv();
        assert!(text.starts_with("node_index,activation_time_s\n0,0\n"));
        assert_eq!(ActivationTimeMap::from_csv(&text).unwrap(), atm);
    }
}
