use serde::{Deserialize, Serialize};

use super::{ConductionVelocities, FiberFrame, Frame, GeometryError, NodeLabel, TetMesh};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeTag {
    #[serde(rename = "ENDO_LV")]
    EndoLv,
    #[serde(rename = "ENDO_RV")]
    EndoRv,
    #[serde(rename = "MYOCARDIUM")]
    Myocardium,
}

/// Undirected mesh edge with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    /// Length in cm.
    pub length: f64,
    /// Unit direction from `i` to `j`.
    pub direction: Vec3,
    pub tag: EdgeTag,
    /// Lowest-index tet containing the edge; its frame orients the edge.
    pub tet: usize,
}

/// Compressed adjacency: neighbours of node `u` are
/// `neighbors[offsets[u]..offsets[u + 1]]` as `(node, edge index)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    offsets: Vec<usize>,
    neighbors: Vec<(usize, usize)>,
    n_edges: usize,
}

impl Topology {
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let edges: Vec<(usize, usize)> = edges.into_iter().collect();
        let mut degree = vec![0usize; n_nodes + 1];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = vec![0usize; n_nodes + 1];
        for u in 0..n_nodes {
            offsets[u + 1] = offsets[u] + degree[u];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![(0, 0); offsets[n_nodes]];
        for (e, &(i, j)) in edges.iter().enumerate() {
            neighbors[fill[i]] = (j, e);
            fill[i] += 1;
            neighbors[fill[j]] = (i, e);
            fill[j] += 1;
        }
        Topology {
            offsets,
            neighbors,
            n_edges: edges.len(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[(usize, usize)] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }
}

/// Tet mesh viewed as an undirected graph over its edges.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    edges: Vec<GraphEdge>,
    topology: Topology,
}

impl MeshGraph {
    /// Every tet edge exactly once, sorted by `(i, j)`.
    pub fn build(mesh: &TetMesh) -> MeshGraph {
        let mut raw: Vec<(usize, usize, usize)> = Vec::with_capacity(mesh.n_tets() * 6);
        for (t, tet) in mesh.tets().iter().enumerate() {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let (i, j) = if tet[a] < tet[b] {
                        (tet[a], tet[b])
                    } else {
                        (tet[b], tet[a])
                    };
                    raw.push((i, j, t));
                }
            }
        }
        raw.sort_unstable();
        raw.dedup_by_key(|e| (e.0, e.1));

        let labels = mesh.node_labels();
        let edges: Vec<GraphEdge> = raw
            .into_iter()
            .map(|(i, j, tet)| {
                let d = vec3::sub(mesh.nodes()[j], mesh.nodes()[i]);
                let length = vec3::norm(d);
                let direction = if length > 0.0 {
                    vec3::scale(d, 1.0 / length)
                } else {
                    [0.0; 3]
                };
                let tag = match (labels[i], labels[j]) {
                    (NodeLabel::LvEndo, NodeLabel::LvEndo) => EdgeTag::EndoLv,
                    (NodeLabel::RvEndo, NodeLabel::RvEndo) => EdgeTag::EndoRv,
                    _ => EdgeTag::Myocardium,
                };
                GraphEdge {
                    i,
                    j,
                    length,
                    direction,
                    tag,
                    tet,
                }
            })
            .collect();
        let topology = Topology::from_edges(mesh.n_nodes(), edges.iter().map(|e| (e.i, e.j)));
        MeshGraph { edges, topology }
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    /// Traversal time of every edge, in edge order.
    pub fn edge_weights(
        &self,
        frame: &FiberFrame,
        cv: &ConductionVelocities,
    ) -> Result<Vec<f64>, GeometryError> {
        self.edges
            .iter()
            .map(|e| edge_traversal_time(e, frame.get(e.tet), cv))
            .collect()
    }
}

/// Orthotropic speed along unit direction `u` in the local frame.
#[inline]
pub fn anisotropic_speed(u: Vec3, frame: &Frame, cv: &ConductionVelocities) -> f64 {
    let a = vec3::dot(u, frame.fiber) * cv.fiber;
    let b = vec3::dot(u, frame.sheet) * cv.sheet;
    let c = vec3::dot(u, frame.normal) * cv.normal;
    (a * a + b * b + c * c).sqrt()
}

/// Seconds needed to cross `edge`. Endocardial edges never travel slower
/// than the endocardial velocity.
pub fn edge_traversal_time(
    edge: &GraphEdge,
    frame: &Frame,
    cv: &ConductionVelocities,
) -> Result<f64, GeometryError> {
    if !(edge.length > 0.0) {
        return Err(GeometryError::ZeroLengthEdge {
            i: edge.i,
            j: edge.j,
        });
    }
    let bulk = anisotropic_speed(edge.direction, frame, cv);
    let speed = match edge.tag {
        EdgeTag::Myocardium => bulk,
        EdgeTag::EndoLv | EdgeTag::EndoRv => cv.endo.max(bulk),
    };
    Ok(edge.length / speed)
}
