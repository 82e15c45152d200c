//! Forward models and metrics for ventricular activation digital twins.
//!
//! The pipeline runs anatomy ([`geometry`]) through a graph Eikonal solve
//! ([`eikonal`]) into an eight-lead pseudo-ECG ([`pseudo_ecg`]). [`cohort`]
//! turns that into labelled virtual subjects, [`losses`] holds training
//! losses and evaluation metrics, and [`inverse`] recovers activation
//! parameters by direct search over the forward model.

pub mod cohort;
pub mod eikonal;
pub mod forward;
pub mod geometry;
pub mod hash;
pub mod inverse;
pub mod losses;
pub mod pseudo_ecg;
pub mod vec3;

pub use eikonal::{ActivationTimeMap, RootNodeSet};
pub use geometry::{ConductionVelocities, FiberFrame, MeshGraph, TetMesh};
pub use pseudo_ecg::{EcgRecord, ElectrodeSet};
