mod common;

use std::collections::BTreeSet;

use cardiotwin_core::geometry::{
    anisotropic_speed, build_phantom, EdgeTag, MeshGraph, PhantomConfig,
};
use cardiotwin_core::vec3::rotation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cv, default_phantom, phantoms};

#[test]
fn graph_edges_match_brute_force_enumeration() {
    for (mesh, _) in phantoms(2) {
        let mut brute = BTreeSet::new();
        for tet in mesh.tets() {
            for a in 0..4 {
                for b in a + 1..4 {
                    brute.insert((tet[a].min(tet[b]), tet[a].max(tet[b])));
                }
            }
        }
        let graph = MeshGraph::build(&mesh);
        let built: Vec<(usize, usize)> = graph.edges().iter().map(|e| (e.i, e.j)).collect();
        let unique: BTreeSet<_> = built.iter().copied().collect();
        assert_eq!(built.len(), unique.len(), "duplicate edges");
        assert_eq!(unique, brute);

        let labels = mesh.node_labels();
        for e in graph.edges() {
            let endo = labels[e.i] == labels[e.j] && labels[e.i].is_endo();
            assert_eq!(
                e.tag != EdgeTag::Myocardium,
                endo,
                "edge ({}, {})",
                e.i,
                e.j
            );
            assert!(e.length > 0.0);
        }
    }
}

#[test]
fn traversal_times_invariant_under_rotation() {
    let (mesh, frame) = default_phantom();
    let r = rotation([0.3, -0.5, 0.8], 1.1);
    let moved = mesh.transformed(&r, [4.0, -2.0, 7.5]);
    let turned = frame.rotated(&r);
    let v = cv(75.0, 45.0, 33.0, 150.0);
    let a = MeshGraph::build(&mesh).edge_weights(&frame, &v).unwrap();
    let b = MeshGraph::build(&moved).edge_weights(&turned, &v).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * x, "{x} vs {y}");
    }
}

#[test]
fn speed_stays_between_normal_and_fiber_velocity() {
    let (_, frame) = default_phantom();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = cv(80.0, 40.0, 30.0, 150.0);
    for _ in 0..10_000 {
        let f = frame.get(rng.random_range(0..frame.len()));
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if norm < 1e-3 {
            continue;
        }
        let s = anisotropic_speed(u.map(|c| c / norm), f, &v);
        assert!(
            s >= 30.0 * (1.0 - 1e-12) && s <= 80.0 * (1.0 + 1e-12),
            "{s}"
        );
    }
}

#[test]
fn frames_are_right_handed_orthonormal() {
    for (_, frame) in phantoms(2) {
        for (t, f) in frame.frames().iter().enumerate() {
            assert!(f.check().is_ok(), "tet {t}");
        }
    }
}

#[test]
fn halving_resolution_grows_node_count_within_band() {
    let coarse = build_phantom(&PhantomConfig::default()).unwrap().0;
    let fine = build_phantom(&PhantomConfig {
        resolution: 0.25,
        ..PhantomConfig::default()
    })
    .unwrap()
    .0;
    let ratio = fine.n_nodes() as f64 / coarse.n_nodes() as f64;
    assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
    assert!(fine.validate().is_ok());
}
