//! Mesh-bound forward pipeline: activation parameters to activation map and ECG.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::{self, ActivationTimeMap, EikonalError, RootNodeSet};
use crate::geometry::{ConductionVelocities, FiberFrame, GeometryError, MeshGraph, TetMesh};
use crate::pseudo_ecg::{
    compute_ecg_ramp, compute_ecg_with, EcgError, EcgRecord, ElectrodeConfig, ElectrodeSet,
    LeadField,
};

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
    #[error(transparent)]
    Ecg(#[from] EcgError),
}

/// The quantities being inferred: four velocities and seven root nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationParams {
    pub cv: ConductionVelocities,
    pub roots: RootNodeSet,
}

/// Sampling of the simulated ECG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    /// Seconds between samples.
    pub dt: f64,
    /// Padded record length.
    pub n_samples: usize,
    pub electrodes: ElectrodeConfig,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            dt: 1e-3,
            n_samples: 512,
            electrodes: ElectrodeConfig::default(),
        }
    }
}

/// Precomputed graph and lead field for one anatomy.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    mesh: TetMesh,
    frame: FiberFrame,
    graph: MeshGraph,
    electrodes: ElectrodeSet,
    field: LeadField,
    settings: SimSettings,
}

impl ForwardModel {
    pub fn new(
        mesh: TetMesh,
        frame: FiberFrame,
        settings: SimSettings,
    ) -> Result<Self, ForwardError> {
        let electrodes = ElectrodeSet::place(&mesh, &settings.electrodes)?;
        Self::with_electrodes(mesh, frame, electrodes, settings)
    }

    pub fn with_electrodes(
        mesh: TetMesh,
        frame: FiberFrame,
        electrodes: ElectrodeSet,
        settings: SimSettings,
    ) -> Result<Self, ForwardError> {
        if frame.len() != mesh.n_tets() {
            return Err(GeometryError::LengthMismatch {
                what: "fibers",
                got: frame.len(),
                expected: mesh.n_tets(),
            }
            .into());
        }
        let graph = MeshGraph::build(&mesh);
        let field = LeadField::new(&mesh, &electrodes.positions)?;
        Ok(ForwardModel {
            mesh,
            frame,
            graph,
            electrodes,
            field,
            settings,
        })
    }

    pub fn mesh(&self) -> &TetMesh {
        &self.mesh
    }

    pub fn frame(&self) -> &FiberFrame {
        &self.frame
    }

    pub fn graph(&self) -> &MeshGraph {
        &self.graph
    }

    pub fn electrodes(&self) -> &ElectrodeSet {
        &self.electrodes
    }

    pub fn settings(&self) -> &SimSettings {
        &self.settings
    }

    pub fn activation(&self, params: &ActivationParams) -> Result<ActivationTimeMap, ForwardError> {
        Ok(eikonal::solve_activation(
            &self.graph,
            &params.cv,
            &self.frame,
            &params.roots,
        )?)
    }

    /// ECG over the activation window `[0, max t)`, padded to the configured length.
    pub fn ecg(&self, atm: &ActivationTimeMap) -> Result<EcgRecord, ForwardError> {
        Ok(compute_ecg_with(
            &self.field,
            atm,
            self.settings.dt,
            atm.max_time,
            self.settings.n_samples,
        )?)
    }

    /// ECG with activation upstrokes spread over `width` seconds.
    pub fn ecg_ramp(&self, atm: &ActivationTimeMap, width: f64) -> Result<EcgRecord, ForwardError> {
        Ok(compute_ecg_ramp(
            &self.field,
            atm,
            self.settings.dt,
            self.settings.n_samples,
            width,
        )?)
    }

    pub fn simulate(
        &self,
        params: &ActivationParams,
    ) -> Result<(ActivationTimeMap, EcgRecord), ForwardError> {
        let atm = self.activation(params)?;
        let ecg = self.ecg(&atm)?;
        Ok((atm, ecg))
    }
}
