mod common;

use std::collections::BTreeSet;

use cardiotwin_core::cohort::{
    farthest_point_sampling, generate_cohort, place_root_nodes, resample_pointcloud, sample_cv,
    Cohort, CohortMesh, Split, CV_RANGES,
};
use cardiotwin_core::eikonal::RootNodeSet;
use cardiotwin_core::geometry::{build_phantom, phantom_family, NodeLabel, PhantomConfig};
use cardiotwin_core::losses::root_positions;
use cardiotwin_core::vec3::dist;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{default_phantom, model, phantoms};

fn cohort_meshes(n: usize) -> Vec<CohortMesh> {
    phantoms(n)
        .into_iter()
        .enumerate()
        .map(|(id, (mesh, frame))| CohortMesh {
            id,
            model: model(mesh, frame),
        })
        .collect()
}

#[test]
fn velocity_samples_respect_ranges_and_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut endo_sum = 0.0;
    for _ in 0..n {
        let cv = sample_cv(&mut rng).unwrap();
        let v = cv.as_array();
        for (k, (lo, hi)) in CV_RANGES.iter().enumerate() {
            assert!(v[k] >= *lo && v[k] <= *hi);
        }
        assert!(cv.fiber > cv.sheet && cv.sheet > cv.normal);
        endo_sum += cv.endo;
    }
    let mean = endo_sum / n as f64;
    assert!((mean - 149.5).abs() < 1.0, "{mean}");
}

fn root_shift(coarse_cfg: &PhantomConfig) -> Vec<f64> {
    let fine_cfg = PhantomConfig {
        resolution: coarse_cfg.resolution / 2.0,
        ..coarse_cfg.clone()
    };
    let coarse = build_phantom(coarse_cfg).unwrap().0;
    let fine = build_phantom(&fine_cfg).unwrap().0;
    let a = root_positions(&coarse, &place_root_nodes(&coarse).unwrap());
    let b = root_positions(&fine, &place_root_nodes(&fine).unwrap());
    let roots = place_root_nodes(&fine).unwrap();
    for (k, &node) in roots.nodes().iter().enumerate() {
        assert_eq!(fine.node_labels()[node], RootNodeSet::expected_label(k));
    }
    (0..7).map(|k| dist(a[k], b[k])).collect()
}

#[test]
fn root_nodes_stable_under_refinement() {
    let cfg = PhantomConfig::default();
    for (k, moved) in root_shift(&cfg).into_iter().enumerate() {
        assert!(moved < cfg.resolution, "root {k} moved {moved} cm");
    }
    // perturbed anatomies: nearest-node snapping on both lattices bounds the
    // shift by half a cell diagonal of each
    for cfg in phantom_family(&cfg, 4, 0.15, 11) {
        let bound = 0.75 * 3f64.sqrt() * cfg.resolution;
        for (k, moved) in root_shift(&cfg).into_iter().enumerate() {
            assert!(moved < bound, "root {k} moved {moved} cm");
        }
    }
}

fn min_pairwise(points: &[[f64; 3]], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            best = best.min(dist(points[i], points[j]));
        }
    }
    best
}

#[test]
fn farthest_point_sampling_beats_random_subsets() {
    let (mesh, _) = default_phantom();
    let pts = mesh.nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for n in [256, 2048] {
        let fps = farthest_point_sampling(pts, n).unwrap();
        let fps_min = min_pairwise(pts, &fps);
        // a random subset spreads wider than FPS only if it avoids every
        // pair of nodes at most `fps_min` apart
        let mut close = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if dist(pts[i], pts[j]) <= fps_min {
                    close.push((i, j));
                }
            }
        }
        let mut member = vec![false; pts.len()];
        for _ in 0..10_000 {
            let subset = sample(&mut rng, pts.len(), n);
            member.iter_mut().for_each(|m| *m = false);
            for i in subset.iter() {
                member[i] = true;
            }
            assert!(
                close.iter().any(|&(i, j)| member[i] && member[j]),
                "n={n}: random subset beat FPS"
            );
        }
    }
    let again = farthest_point_sampling(pts, 256).unwrap();
    assert_eq!(again, farthest_point_sampling(pts, 256).unwrap());
    assert!(resample_pointcloud(&mesh, pts.len() + 1).is_err());
}

#[test]
fn cohort_follows_protocol_and_replays() {
    let meshes = cohort_meshes(10);
    let cohort = generate_cohort(&meshes, 10, 42).unwrap();
    assert_eq!(cohort.subjects.len(), 100);
    assert_eq!(cohort.split_sizes(), (60, 10, 30));

    let mut by_split: [BTreeSet<usize>; 3] = Default::default();
    for s in &cohort.subjects {
        let slot = match s.split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        by_split[slot].insert(s.mesh_id);
        let v = s.params.cv.as_array();
        for (k, (lo, hi)) in CV_RANGES.iter().enumerate() {
            assert!(v[k] >= *lo && v[k] <= *hi);
        }
        assert!(s.params.cv.fiber > s.params.cv.sheet && s.params.cv.sheet > s.params.cv.normal);
        let mesh = meshes[s.mesh_id].model.mesh();
        let labels: Vec<NodeLabel> = s
            .params
            .roots
            .nodes()
            .iter()
            .map(|&i| mesh.node_labels()[i])
            .collect();
        assert_eq!(
            labels.iter().filter(|l| **l == NodeLabel::LvEndo).count(),
            4
        );
        assert_eq!(
            labels.iter().filter(|l| **l == NodeLabel::RvEndo).count(),
            3
        );
    }
    assert_eq!(
        by_split.iter().map(BTreeSet::len).collect::<Vec<_>>(),
        vec![6, 1, 3]
    );
    assert!(by_split[0].is_disjoint(&by_split[2]) && by_split[1].is_disjoint(&by_split[2]));
    assert!(by_split[0].is_disjoint(&by_split[1]));

    // stored parameters replay to the stored ECG
    for s in cohort.subjects.iter().step_by(7) {
        let (_, ecg) = meshes[s.mesh_id].model.simulate(&s.params).unwrap();
        assert_eq!(ecg, s.ecg);
    }

    // different ECGs on the same anatomy
    for m in 0..10 {
        let recs: Vec<_> = cohort
            .subjects
            .iter()
            .filter(|s| s.mesh_id == m)
            .map(|s| &s.ecg)
            .collect();
        let n = recs[0].n_samples();
        let var: f64 = (0..n)
            .map(|k| {
                let vals: Vec<f64> = recs.iter().map(|r| r.leads[1][k]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            })
            .sum();
        assert!(var > 0.0, "mesh {m}");
    }

    let again = generate_cohort(&meshes, 10, 42).unwrap();
    assert_eq!(again.to_jsonl(), cohort.to_jsonl());
    assert_eq!(Cohort::from_jsonl(&cohort.to_jsonl()).unwrap(), cohort);
}
