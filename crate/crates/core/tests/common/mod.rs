#![allow(dead_code)]

use cardiotwin_core::cohort::place_root_nodes;
use cardiotwin_core::forward::{ActivationParams, ForwardModel, SimSettings};
use cardiotwin_core::geometry::{
    build_phantom, phantom_family, ConductionVelocities, FiberFrame, PhantomConfig, TetMesh,
};
use cardiotwin_core::losses::midpoint_cv;
use rand::Rng;

pub fn phantoms(n: usize) -> Vec<(TetMesh, FiberFrame)> {
    phantom_family(&PhantomConfig::default(), n, 0.15, 11)
        .iter()
        .map(|c| build_phantom(c).expect("phantom builds"))
        .collect()
}

pub fn default_phantom() -> (TetMesh, FiberFrame) {
    build_phantom(&PhantomConfig::default()).unwrap()
}

pub fn model(mesh: TetMesh, frame: FiberFrame) -> ForwardModel {
    ForwardModel::new(mesh, frame, SimSettings::default()).unwrap()
}

pub fn default_params(mesh: &TetMesh) -> ActivationParams {
    ActivationParams {
        cv: midpoint_cv(),
        roots: place_root_nodes(mesh).unwrap(),
    }
}

pub fn cv(f: f64, s: f64, n: f64, e: f64) -> ConductionVelocities {
    ConductionVelocities::new(f, s, n, e).unwrap()
}

/// Connected random graph: a random spanning tree plus extra edges.
pub fn random_graph<R: Rng>(
    rng: &mut R,
    n: usize,
    extra: usize,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    let weights = edges
        .iter()
        .map(|_| rng.random_range(0.001..0.05))
        .collect();
    (edges, weights)
}
