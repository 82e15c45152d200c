//! Tetrahedral anatomy, conduction frames, and the traversal graph.

mod graph;
mod io;
mod phantom;

pub use graph::{anisotropic_speed, edge_traversal_time, EdgeTag, GraphEdge, MeshGraph, Topology};
pub use io::{read_mesh_json, write_mesh_json, MeshFile};
pub use phantom::{build_phantom, phantom_family, PhantomConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::{self, Mat3, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("tet {tet} references node {node}, but the mesh has {n_nodes} nodes")]
    IndexOutOfRange {
        tet: usize,
        node: usize,
        n_nodes: usize,
    },
    #[error("tet {tet} repeats node {node}")]
    RepeatedNode { tet: usize, node: usize },
    #[error("tet {tet} has non-positive signed volume {volume:e}")]
    NonPositiveVolume { tet: usize, volume: f64 },
    #[error("node {node} does not belong to any tet")]
    OrphanNode { node: usize },
    #[error("node {node} is not connected to node 0")]
    Disconnected { node: usize },
    #[error("node {node} has a non-finite coordinate")]
    NonFiniteNode { node: usize },
    #[error("fiber frame of tet {tet} is not a right-handed orthonormal triad ({reason})")]
    BadFrame { tet: usize, reason: &'static str },
    #[error("edge ({i}, {j}) has zero length")]
    ZeroLengthEdge { i: usize, j: usize },
    #[error("degenerate phantom configuration: {0}")]
    DegenerateConfig(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("mesh file: {0}")]
    Io(String),
}

/// Anatomical surface tag of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    #[serde(rename = "LV_ENDO")]
    LvEndo,
    #[serde(rename = "RV_ENDO")]
    RvEndo,
    #[serde(rename = "EPI")]
    Epi,
    #[serde(rename = "INTERIOR")]
    Interior,
}

impl NodeLabel {
    pub fn is_endo(self) -> bool {
        matches!(self, NodeLabel::LvEndo | NodeLabel::RvEndo)
    }
}

/// Ventricle a node belongs to; the class label of the point-cloud view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    #[serde(rename = "LV")]
    Lv,
    #[serde(rename = "RV")]
    Rv,
}

impl Part {
    pub const ALL: [Part; 2] = [Part::Lv, Part::Rv];

    pub fn index(self) -> usize {
        match self {
            Part::Lv => 0,
            Part::Rv => 1,
        }
    }

    pub fn endo_label(self) -> NodeLabel {
        match self {
            Part::Lv => NodeLabel::LvEndo,
            Part::Rv => NodeLabel::RvEndo,
        }
    }
}

/// Biventricular tetrahedral mesh. Coordinates in cm.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    nodes: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    node_labels: Vec<NodeLabel>,
    part_labels: Vec<Part>,
}

impl TetMesh {
    /// Builds a mesh and checks every invariant, reporting the first violation.
    pub fn new(
        nodes: Vec<Vec3>,
        tets: Vec<[usize; 4]>,
        node_labels: Vec<NodeLabel>,
        part_labels: Vec<Part>,
    ) -> Result<Self, GeometryError> {
        let mesh = TetMesh {
            nodes,
            tets,
            node_labels,
            part_labels,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.nodes.len();
        if self.node_labels.len() != n {
            return Err(GeometryError::LengthMismatch {
                what: "node_labels",
                got: self.node_labels.len(),
                expected: n,
            });
        }
        if self.part_labels.len() != n {
            return Err(GeometryError::LengthMismatch {
                what: "part_labels",
                got: self.part_labels.len(),
                expected: n,
            });
        }
        for (i, p) in self.nodes.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(GeometryError::NonFiniteNode { node: i });
            }
        }
        for (t, tet) in self.tets.iter().enumerate() {
            for (k, &v) in tet.iter().enumerate() {
                if v >= n {
                    return Err(GeometryError::IndexOutOfRange {
                        tet: t,
                        node: v,
                        n_nodes: n,
                    });
                }
                if tet[..k].contains(&v) {
                    return Err(GeometryError::RepeatedNode { tet: t, node: v });
                }
            }
        }
        for t in 0..self.tets.len() {
            let volume = self.tet_volume(t);
            if !(volume > 0.0) {
                return Err(GeometryError::NonPositiveVolume { tet: t, volume });
            }
        }
        let mut used = vec![false; n];
        for tet in &self.tets {
            for &v in tet {
                used[v] = true;
            }
        }
        if let Some(node) = used.iter().position(|u| !u) {
            return Err(GeometryError::OrphanNode { node });
        }
        if let Some(node) = self.first_unreachable_node() {
            return Err(GeometryError::Disconnected { node });
        }
        Ok(())
    }

    fn first_unreachable_node(&self) -> Option<usize> {
        let n = self.nodes.len();
        if n == 0 {
            return None;
        }
        let adjacency = self.node_adjacency();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    /// Sorted, deduplicated neighbour lists through tet edges.
    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for tet in &self.tets {
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        adjacency[tet[a]].push(tet[b]);
                    }
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        adjacency
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn node_labels(&self) -> &[NodeLabel] {
        &self.node_labels
    }

    pub fn part_labels(&self) -> &[Part] {
        &self.part_labels
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_points(&self, t: usize) -> [Vec3; 4] {
        let tet = self.tets[t];
        [
            self.nodes[tet[0]],
            self.nodes[tet[1]],
            self.nodes[tet[2]],
            self.nodes[tet[3]],
        ]
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tet_points(t);
        vec3::tet_volume(a, b, c, d)
    }

    pub fn tet_centroid(&self, t: usize) -> Vec3 {
        vec3::centroid4(self.tet_points(t))
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.nodes {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for p in &self.nodes {
            c = vec3::add(c, *p);
        }
        vec3::scale(c, 1.0 / self.nodes.len().max(1) as f64)
    }

    /// Indices of nodes carrying `label`, ascending.
    pub fn nodes_with_label(&self, label: NodeLabel) -> Vec<usize> {
        self.node_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Applies `p -> R p + shift` to every node. Rigid motions keep the mesh valid.
    pub fn transformed(&self, rotation: &Mat3, shift: Vec3) -> TetMesh {
        TetMesh {
            nodes: self
                .nodes
                .iter()
                .map(|p| vec3::add(vec3::mat_vec(rotation, *p), shift))
                .collect(),
            tets: self.tets.clone(),
            node_labels: self.node_labels.clone(),
            part_labels: self.part_labels.clone(),
        }
    }
}

/// Orthonormal conduction triad of one tet: fiber, sheet, sheet-normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub fiber: Vec3,
    pub sheet: Vec3,
    pub normal: Vec3,
}

impl Frame {
    pub fn check(&self) -> Result<(), &'static str> {
        const TOL: f64 = 1e-9;
        for v in [self.fiber, self.sheet, self.normal] {
            if (vec3::norm(v) - 1.0).abs() > TOL {
                return Err("non-unit axis");
            }
        }
        if vec3::dot(self.fiber, self.sheet).abs() > TOL
            || vec3::dot(self.fiber, self.normal).abs() > TOL
            || vec3::dot(self.sheet, self.normal).abs() > TOL
        {
            return Err("axes not orthogonal");
        }
        if (vec3::det3(self.fiber, self.sheet, self.normal) - 1.0).abs() > TOL {
            return Err("left-handed");
        }
        Ok(())
    }

    pub fn rotated(&self, rotation: &Mat3) -> Frame {
        Frame {
            fiber: vec3::mat_vec(rotation, self.fiber),
            sheet: vec3::mat_vec(rotation, self.sheet),
            normal: vec3::mat_vec(rotation, self.normal),
        }
    }
}

/// Per-tet conduction frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberFrame {
    frames: Vec<Frame>,
}

impl FiberFrame {
    pub fn new(frames: Vec<Frame>) -> Result<Self, GeometryError> {
        for (tet, f) in frames.iter().enumerate() {
            f.check()
                .map_err(|reason| GeometryError::BadFrame { tet, reason })?;
        }
        Ok(FiberFrame { frames })
    }

    /// The same axis-aligned frame for every tet.
    pub fn uniform(n_tets: usize) -> Self {
        FiberFrame {
            frames: vec![
                Frame {
                    fiber: [1.0, 0.0, 0.0],
                    sheet: [0.0, 1.0, 0.0],
                    normal: [0.0, 0.0, 1.0],
                };
                n_tets
            ],
        }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn get(&self, tet: usize) -> &Frame {
        &self.frames[tet]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rotated(&self, rotation: &Mat3) -> FiberFrame {
        FiberFrame {
            frames: self.frames.iter().map(|f| f.rotated(rotation)).collect(),
        }
    }
}

/// Conduction velocities in cm/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductionVelocities {
    pub fiber: f64,
    pub sheet: f64,
    pub normal: f64,
    pub endo: f64,
}

impl ConductionVelocities {
    pub const NAMES: [&'static str; 4] = ["fiber", "sheet", "sheet_normal", "endocardial"];

    /// Checked constructor: `fiber > sheet > normal > 0` and `endo > 0`.
    pub fn new(fiber: f64, sheet: f64, normal: f64, endo: f64) -> Option<Self> {
        let cv = ConductionVelocities {
            fiber,
            sheet,
            normal,
            endo,
        };
        cv.is_valid().then_some(cv)
    }

    pub fn is_valid(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
            && self.fiber > self.sheet
            && self.sheet > self.normal
            && self.normal > 0.0
            && self.endo > 0.0
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.fiber, self.sheet, self.normal, self.endo]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        ConductionVelocities {
            fiber: v[0],
            sheet: v[1],
            normal: v[2],
            endo: v[3],
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_array(self.as_array().map(|v| v * k))
    }
}
