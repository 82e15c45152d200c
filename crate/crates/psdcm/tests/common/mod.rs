#![allow(dead_code)]

use cardiotwin_core::cohort::{generate_cohort, Cohort, CohortMesh};
use cardiotwin_core::forward::{ForwardModel, SimSettings};
use cardiotwin_core::geometry::{build_phantom, phantom_family, PhantomConfig, TetMesh};
use cardiotwin_psdcm::data::Dataset;
use cardiotwin_psdcm::model::ModelConfig;

pub struct Fixture {
    pub meshes: Vec<TetMesh>,
    pub cohort: Cohort,
    pub dataset: Dataset,
}

impl Fixture {
    pub fn mesh_refs(&self) -> Vec<(usize, &TetMesh)> {
        self.meshes.iter().enumerate().collect()
    }
}

pub fn fixture(n_meshes: usize, per_mesh: usize, cfg: &ModelConfig) -> Fixture {
    let models: Vec<CohortMesh> = phantom_family(&PhantomConfig::default(), n_meshes, 0.15, 3)
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let (mesh, frame) = build_phantom(c).unwrap();
            CohortMesh {
                id,
                model: ForwardModel::new(mesh, frame, SimSettings::default()).unwrap(),
            }
        })
        .collect();
    let cohort = generate_cohort(&models, per_mesh, 8).unwrap();
    let meshes: Vec<TetMesh> = models.iter().map(|m| m.model.mesh().clone()).collect();
    let refs: Vec<(usize, &TetMesh)> = meshes.iter().enumerate().collect();
    let dataset = Dataset::build(&refs, &cohort.subjects, cfg).unwrap();
    Fixture {
        meshes,
        cohort,
        dataset,
    }
}

/// A narrower network for the tests that train.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        latent: 16,
        hidden: [64, 32],
        ..ModelConfig::default()
    }
}
