use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FiberFrame, Frame, GeometryError, NodeLabel, Part, TetMesh};
use crate::vec3::Vec3;

/// On-disk mesh layout. Units: cm. `fibers` holds one `[f, s, n]` triad per tet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    pub nodes: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub node_labels: Vec<NodeLabel>,
    pub part_labels: Vec<Part>,
    pub fibers: Vec<[Vec3; 3]>,
}

impl MeshFile {
    pub fn from_parts(mesh: &TetMesh, frame: &FiberFrame) -> MeshFile {
        MeshFile {
            nodes: mesh.nodes().to_vec(),
            tets: mesh.tets().to_vec(),
            node_labels: mesh.node_labels().to_vec(),
            part_labels: mesh.part_labels().to_vec(),
            fibers: frame
                .frames()
                .iter()
                .map(|f| [f.fiber, f.sheet, f.normal])
                .collect(),
        }
    }

    /// Validates every invariant; the error names the first violation.
    pub fn into_parts(self) -> Result<(TetMesh, FiberFrame), GeometryError> {
        let n_tets = self.tets.len();
        let mesh = TetMesh::new(self.nodes, self.tets, self.node_labels, self.part_labels)?;
        if self.fibers.len() != n_tets {
            return Err(GeometryError::LengthMismatch {
                what: "fibers",
                got: self.fibers.len(),
                expected: n_tets,
            });
        }
        let frame = FiberFrame::new(
            self.fibers
                .into_iter()
                .map(|[fiber, sheet, normal]| Frame {
                    fiber,
                    sheet,
                    normal,
                })
                .collect(),
        )?;
        Ok((mesh, frame))
    }
}

pub fn write_mesh_json(
    path: &Path,
    mesh: &TetMesh,
    frame: &FiberFrame,
) -> Result<(), GeometryError> {
    let text = serde_json::to_string(&MeshFile::from_parts(mesh, frame))
        .map_err(|e| GeometryError::Io(e.to_string()))?;
    fs::write(path, text).map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))
}

pub fn read_mesh_json(path: &Path) -> Result<(TetMesh, FiberFrame), GeometryError> {
    let text = fs::read_to_string(path)
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
    let file: MeshFile = serde_json::from_str(&text).map_err(|e| {
        if e.to_string().contains("unknown variant") {
            GeometryError::UnknownLabel(e.to_string())
        } else {
            GeometryError::Io(e.to_string())
        }
    })?;
    file.into_parts()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MeshFile {
        MeshFile {
            nodes: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            tets: vec![[0, 1, 2, 3]],
            node_labels: vec![
                NodeLabel::LvEndo,
                NodeLabel::Epi,
                NodeLabel::Epi,
                NodeLabel::Interior,
            ],
            part_labels: vec![Part::Lv; 4],
            fibers: vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]],
        }
    }

    #[test]
    fn json_layout_uses_wire_names() {
        let text = serde_json::to_string(&tiny()).unwrap();
        assert!(text.contains("\"LV_ENDO\""));
        assert!(text.contains("\"part_labels\":[\"LV\""));
        let back: MeshFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, tiny());
        back.into_parts().unwrap();
    }

    #[test]
    fn import_reports_first_violation() {
        let mut f = tiny();
        f.tets[0] = [0, 2, 1, 3];
        assert!(matches!(
            f.into_parts(),
            Err(GeometryError::NonPositiveVolume { tet: 0, .. })
        ));

        let mut f = tiny();
        f.tets[0] = [0, 1, 2, 9];
        assert_eq!(
            f.into_parts().unwrap_err(),
            GeometryError::IndexOutOfRange {
                tet: 0,
                node: 9,
                n_nodes: 4
            }
        );

        let mut f = tiny();
        f.nodes.push([5.0, 5.0, 5.0]);
        f.node_labels.push(NodeLabel::Epi);
        f.part_labels.push(Part::Rv);
        assert_eq!(
            f.into_parts().unwrap_err(),
            GeometryError::OrphanNode { node: 4 }
        );

        let mut f = tiny();
        f.fibers[0][2] = [0.0, 0.0, -1.0];
        assert!(matches!(
            f.into_parts(),
            Err(GeometryError::BadFrame { tet: 0, .. })
        ));
    }

    #[test]
    fn disconnected_mesh_rejected() {
        let mut f = tiny();
        f.nodes.extend([
            [5.0, 0.0, 0.0],
            [6.0, 0.0, 0.0],
            [5.0, 1.0, 0.0],
            [5.0, 0.0, 1.0],
        ]);
        f.tets.push([4, 5, 6, 7]);
        f.node_labels.extend([NodeLabel::Epi; 4]);
        f.part_labels.extend([Part::Rv; 4]);
        f.fibers.push(f.fibers[0]);
        assert_eq!(
            f.into_parts().unwrap_err(),
            GeometryError::Disconnected { node: 4 }
        );
    }
}
