//! Turning meshes and virtual subjects into network inputs and targets.

use serde::Serialize;
use thiserror::Error;

use cardiotwin_core::cohort::{
    resample_by_part, resample_pointcloud, CohortError, Split, VirtualSubject,
};
use cardiotwin_core::eikonal::N_ROOTS;
use cardiotwin_core::geometry::{Part, TetMesh};
use cardiotwin_core::hash::config_hash;
use cardiotwin_core::losses::root_positions;
use cardiotwin_core::pseudo_ecg::{EcgRecord, N_LEADS};
use cardiotwin_core::vec3::Vec3;

use crate::model::{normalize_conditions, Input, ModelConfig};
use crate::tape::Mat;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Sampling(#[from] CohortError),
    #[error("subject {subject}: ECG has {valid} valid samples but the network reads {n}")]
    EcgTooLong {
        subject: usize,
        valid: usize,
        n: usize,
    },
    #[error("subject {subject}: no mesh with id {mesh}")]
    MissingMesh { subject: usize, mesh: usize },
    #[error("preprocessing hash {got} does not match model {expected}")]
    HashMismatch { expected: String, got: String },
}

/// Everything about preprocessing that the model weights depend on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preprocessing {
    pub n_points: usize,
    pub n_coarse: usize,
    pub n_dense: usize,
    pub coord_scale: f64,
}

impl Preprocessing {
    pub fn of(cfg: &ModelConfig) -> Self {
        Preprocessing {
            n_points: cfg.n_points,
            n_coarse: cfg.n_coarse,
            n_dense: cfg.n_dense,
            coord_scale: crate::model::COORD_SCALE,
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Anatomy-level inputs and reconstruction targets, shared by a mesh's subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshData {
    pub mesh_id: usize,
    /// `n × 4` network input.
    pub pc: Mat,
    /// Per ventricle, LV first.
    pub gt_coarse: [Vec<Vec3>; 2],
    pub gt_dense: [Vec<Vec3>; 2],
}

pub fn prepare_mesh(
    mesh_id: usize,
    mesh: &TetMesh,
    cfg: &ModelConfig,
) -> Result<MeshData, DataError> {
    let cloud = resample_pointcloud(mesh, cfg.n_points)?;
    let mut pc = Mat::zeros(cfg.n_points, 4);
    for (i, (p, l)) in cloud.points.iter().zip(&cloud.labels).enumerate() {
        pc.data[i * 4..i * 4 + 3].copy_from_slice(p);
        pc.data[i * 4 + 3] = l.index() as f64;
    }
    let coarse = resample_by_part(mesh.nodes(), mesh.part_labels(), cfg.n_coarse / 2)?;
    let dense = resample_by_part(mesh.nodes(), mesh.part_labels(), cfg.n_dense / 2)?;
    Ok(MeshData {
        mesh_id,
        pc,
        gt_coarse: Part::ALL.map(|p| coarse.of_part(p)),
        gt_dense: Part::ALL.map(|p| dense.of_part(p)),
    })
}

/// One subject ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject_id: usize,
    pub mesh_id: usize,
    pub split: Split,
    pub input: Input,
    /// The full stored record, for masked evaluation.
    pub ecg: EcgRecord,
    pub rn: [Vec3; N_ROOTS],
    pub cv: [f64; 4],
}

/// First `n` samples of every lead, one row per sample.
pub fn ecg_matrix(ecg: &EcgRecord, n: usize) -> Mat {
    let mut m = Mat::zeros(n, N_LEADS);
    for (l, lead) in ecg.leads.iter().enumerate() {
        for (k, v) in lead.iter().take(n).enumerate() {
            m.data[k * N_LEADS + l] = *v;
        }
    }
    m
}

/// Inverse of [`ecg_matrix`], padded back to `n_out` with the mask of `like`.
pub fn ecg_record(m: &Mat, like: &EcgRecord) -> EcgRecord {
    let n_out = like.n_samples();
    let leads = (0..N_LEADS)
        .map(|l| {
            (0..n_out)
                .map(|k| if k < m.rows { m.get(k, l) } else { 0.0 })
                .collect()
        })
        .collect();
    EcgRecord {
        dt: like.dt,
        leads,
        mask: like.mask.clone(),
    }
}

pub fn prepare_subject(
    subject: &VirtualSubject,
    mesh: &TetMesh,
    mesh_data: &MeshData,
    cfg: &ModelConfig,
) -> Result<Sample, DataError> {
    let valid = subject.ecg.valid_len();
    if valid > cfg.n_points {
        return Err(DataError::EcgTooLong {
            subject: subject.id,
            valid,
            n: cfg.n_points,
        });
    }
    Ok(Sample {
        subject_id: subject.id,
        mesh_id: subject.mesh_id,
        split: subject.split,
        input: Input::new(
            mesh_data.pc.clone(),
            ecg_matrix(&subject.ecg, cfg.n_points),
            normalize_conditions(&subject.conditions),
        ),
        ecg: subject.ecg.clone(),
        rn: root_positions(mesh, &subject.params.roots),
        cv: subject.params.cv.as_array(),
    })
}

/// Network-ready dataset: per-mesh targets plus all subjects in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub preprocessing: String,
    pub meshes: Vec<MeshData>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// `meshes` pairs each mesh id with its anatomy.
    pub fn build(
        meshes: &[(usize, &TetMesh)],
        subjects: &[VirtualSubject],
        cfg: &ModelConfig,
    ) -> Result<Self, DataError> {
        let mesh_data = meshes
            .iter()
            .map(|(id, m)| prepare_mesh(*id, m, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let mut samples = Vec::with_capacity(subjects.len());
        for s in subjects {
            let k = meshes.iter().position(|(id, _)| *id == s.mesh_id).ok_or(
                DataError::MissingMesh {
                    subject: s.id,
                    mesh: s.mesh_id,
                },
            )?;
            samples.push(prepare_subject(s, meshes[k].1, &mesh_data[k], cfg)?);
        }
        samples.sort_by_key(|s| s.subject_id);
        Ok(Dataset {
            preprocessing: Preprocessing::of(cfg).hash(),
            meshes: mesh_data,
            samples,
        })
    }

    pub fn mesh(&self, mesh_id: usize) -> &MeshData {
        self.meshes
            .iter()
            .find(|m| m.mesh_id == mesh_id)
            .expect("dataset holds every sample's mesh")
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}
