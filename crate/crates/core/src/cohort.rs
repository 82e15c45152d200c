//! Virtual cohorts: sampled activation parameters, forward-simulated ECGs,
//! mesh-level splits, and point-cloud resampling.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::{EikonalError, RootNodeSet, N_ROOTS};
use crate::forward::{ActivationParams, ForwardError, ForwardModel};
use crate::geometry::{ConductionVelocities, NodeLabel, Part, TetMesh};
use crate::pseudo_ecg::EcgRecord;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("no valid velocity draw after {0} attempts")]
    RejectionCap(usize),
    #[error("mesh has no {0:?} nodes")]
    NoEndocardium(NodeLabel),
    #[error("subject {subject}: {source}")]
    Simulation {
        subject: usize,
        #[source]
        source: ForwardError,
    },
    #[error("cannot sample {requested} distinct points from {available}")]
    TooManyPoints { requested: usize, available: usize },
    #[error("need at least {min} points, got {requested}")]
    TooFewPoints { requested: usize, min: usize },
    #[error("cohort needs at least one mesh and one subject per mesh")]
    Empty,
    #[error(transparent)]
    Roots(#[from] EikonalError),
    #[error("cohort file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Physiological velocity ranges in cm/s: fiber, sheet, sheet-normal, endocardial.
pub const CV_RANGES: [(f64, f64); 4] = [(50.0, 88.0), (32.0, 49.0), (29.0, 45.0), (120.0, 179.0)];

const MAX_DRAWS: usize = 1_000_000;

/// Uniform draw inside [`CV_RANGES`], rejected until `fiber > sheet > normal`.
pub fn sample_cv<R: Rng + ?Sized>(rng: &mut R) -> Result<ConductionVelocities, CohortError> {
    for _ in 0..MAX_DRAWS {
        let v = CV_RANGES.map(|(lo, hi)| rng.random_range(lo..=hi));
        if let Some(cv) = ConductionVelocities::new(v[0], v[1], v[2], v[3]) {
            return Ok(cv);
        }
    }
    Err(CohortError::RejectionCap(MAX_DRAWS))
}

pub fn cv_in_ranges(cv: &ConductionVelocities) -> bool {
    cv.as_array()
        .iter()
        .zip(CV_RANGES)
        .all(|(v, (lo, hi))| (lo..=hi).contains(v))
        && cv.is_valid()
}

/// Subject covariates used as network conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    /// Years, in `[40, 80]`.
    pub age: f64,
    /// 0 or 1.
    pub sex: u8,
    /// kg/m², in `[16, 45]`.
    pub bmi: f64,
}

impl Conditions {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Conditions {
        let age = rng.random_range(40.0..=80.0);
        let sex = u8::from(rng.random_bool(0.5));
        let bmi: f64 = Normal::new(27.0, 4.0).expect("valid normal").sample(rng);
        Conditions {
            age,
            sex,
            bmi: bmi.clamp(16.0, 45.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        (40.0..=80.0).contains(&self.age) && self.sex <= 1 && (16.0..=45.0).contains(&self.bmi)
    }
}

/// Normalized anatomical site: apex-to-base fraction and circumferential angle in degrees.
pub const LV_ROOT_SITES: [(f64, f64); 4] = [(0.2, 40.0), (0.5, 90.0), (0.5, 200.0), (0.35, 320.0)];
pub const RV_ROOT_SITES: [(f64, f64); 3] = [(0.25, 60.0), (0.5, 150.0), (0.5, 270.0)];

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Endocardial node nearest to a normalized site. Distances are taken in a
/// cylindrical chart around the cavity axis: height, arc length at the mean
/// endocardial radius, and radial offset from that radius.
fn nearest_site(mesh: &TetMesh, candidates: &[usize], site: (f64, f64)) -> usize {
    let pts: Vec<Vec3> = candidates.iter().map(|&i| mesh.nodes()[i]).collect();
    let z_apex = pts.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    let z_base = pts.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let radius = pts
        .iter()
        .map(|p| (p[0] - cx).hypot(p[1] - cy))
        .sum::<f64>()
        / n;
    let z_target = z_apex + site.0 * (z_base - z_apex);
    let theta = site.1.to_radians();
    let mut best = (f64::INFINITY, candidates[0]);
    for (&i, p) in candidates.iter().zip(&pts) {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        let rho = dx.hypot(dy);
        let arc = radius * angle_gap(dy.atan2(dx), theta);
        let dz = p[2] - z_target;
        let dr = rho - radius;
        let d2 = dz * dz + arc * arc + dr * dr;
        if d2 < best.0 {
            best = (d2, i);
        }
    }
    best.1
}

/// Seven fixed homologous root nodes: four LV sites then three RV sites.
pub fn place_root_nodes(mesh: &TetMesh) -> Result<RootNodeSet, CohortError> {
    let lv = mesh.nodes_with_label(NodeLabel::LvEndo);
    let rv = mesh.nodes_with_label(NodeLabel::RvEndo);
    if lv.is_empty() {
        return Err(CohortError::NoEndocardium(NodeLabel::LvEndo));
    }
    if rv.is_empty() {
        return Err(CohortError::NoEndocardium(NodeLabel::RvEndo));
    }
    let mut nodes = [0usize; N_ROOTS];
    for (k, site) in LV_ROOT_SITES.iter().enumerate() {
        nodes[k] = nearest_site(mesh, &lv, *site);
    }
    for (k, site) in RV_ROOT_SITES.iter().enumerate() {
        nodes[LV_ROOT_SITES.len() + k] = nearest_site(mesh, &rv, *site);
    }
    Ok(RootNodeSet::new(mesh, nodes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "TRAIN")]
    Train,
    #[serde(rename = "VAL")]
    Val,
    #[serde(rename = "TEST")]
    Test,
}

/// Mesh counts `(train, val, test)` for a 60/10/30 split of `n_meshes`.
pub fn split_counts(n_meshes: usize) -> (usize, usize, usize) {
    match n_meshes {
        0 => (0, 0, 0),
        1 => (1, 0, 0),
        2 => (1, 1, 0),
        m => {
            let val = ((m as f64 * 0.1).round() as usize).max(1);
            let test = ((m as f64 * 0.3).round() as usize).max(1);
            (m - val - test, val, test)
        }
    }
}

/// Seeded permutation of mesh positions into train, val and test.
pub fn assign_splits(n_meshes: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n_meshes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    // Fisher-Yates, spelled out so the permutation only depends on the stream
    for i in (1..n_meshes).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let (train, val, _) = split_counts(n_meshes);
    let mut splits = vec![Split::Test; n_meshes];
    for (rank, &m) in order.iter().enumerate() {
        splits[m] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualSubject {
    pub id: usize,
    pub mesh_id: usize,
    pub conditions: Conditions,
    pub params: ActivationParams,
    pub ecg: EcgRecord,
    pub split: Split,
}

/// A mesh with its forward model and a stable identifier.
pub struct CohortMesh {
    pub id: usize,
    pub model: ForwardModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<VirtualSubject>,
}

impl Cohort {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &VirtualSubject> {
        self.subjects.iter().filter(move |s| s.split == split)
    }

    /// Subject counts `(train, val, test)`.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.split(s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.subjects {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(s).expect("subject serializes")
            );
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CohortError> {
        let subjects = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| CohortError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Cohort { subjects })
    }
}

/// Per mesh: fixed roots, conditions drawn once, `per_mesh` velocity draws,
/// each simulated. Subjects are numbered in mesh order.
pub fn generate_cohort(
    meshes: &[CohortMesh],
    per_mesh: usize,
    seed: u64,
) -> Result<Cohort, CohortError> {
    if meshes.is_empty() || per_mesh == 0 {
        return Err(CohortError::Empty);
    }
    let splits = assign_splits(meshes.len(), seed);
    let mut subjects = Vec::with_capacity(meshes.len() * per_mesh);
    for (m, entry) in meshes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + m as u64);
        let roots = place_root_nodes(entry.model.mesh())?;
        let conditions = Conditions::sample(&mut rng);
        for k in 0..per_mesh {
            let id = m * per_mesh + k;
            let cv = sample_cv(&mut rng)?;
            let params = ActivationParams {
                cv,
                roots: roots.clone(),
            };
            let (_, ecg) =
                entry
                    .model
                    .simulate(&params)
                    .map_err(|source| CohortError::Simulation {
                        subject: id,
                        source,
                    })?;
            subjects.push(VirtualSubject {
                id,
                mesh_id: entry.id,
                conditions,
                params,
                ecg,
                split: splits[m],
            });
        }
    }
    Ok(Cohort { subjects })
}

/// Labelled point cloud: coordinates plus ventricle tag per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Vec<Part>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn of_part(&self, part: Part) -> Vec<Vec3> {
        self.points
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == part)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// Farthest-point sampling of `n` distinct indices, starting from the point
/// nearest the centroid. Ties go to the lowest index.
pub fn farthest_point_sampling(points: &[Vec3], n: usize) -> Result<Vec<usize>, CohortError> {
    if n > points.len() {
        return Err(CohortError::TooManyPoints {
            requested: n,
            available: points.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = [0.0; 3];
    for p in points {
        c = vec3::add(c, *p);
    }
    let c = vec3::scale(c, 1.0 / points.len() as f64);
    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = vec3::dist(*p, c);
        if d < best {
            best = d;
            first = i;
        }
    }
    let mut chosen = Vec::with_capacity(n);
    let mut gap = vec![f64::INFINITY; points.len()];
    let mut current = first;
    for _ in 0..n {
        chosen.push(current);
        gap[current] = f64::NEG_INFINITY;
        let mut next = current;
        let mut far = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if gap[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = vec3::dist(*p, points[current]);
            if d < gap[i] {
                gap[i] = d;
            }
            if gap[i] > far {
                far = gap[i];
                next = i;
            }
        }
        current = next;
    }
    Ok(chosen)
}

/// `n` mesh nodes chosen by farthest-point sampling, with their part labels.
pub fn resample_pointcloud(mesh: &TetMesh, n: usize) -> Result<PointCloud, CohortError> {
    if n < 4 {
        return Err(CohortError::TooFewPoints {
            requested: n,
            min: 4,
        });
    }
    let idx = farthest_point_sampling(mesh.nodes(), n)?;
    Ok(PointCloud {
        points: idx.iter().map(|&i| mesh.nodes()[i]).collect(),
        labels: idx.iter().map(|&i| mesh.part_labels()[i]).collect(),
    })
}

/// Per-part farthest-point subsample with `per_part` points in each ventricle.
pub fn resample_by_part(
    points: &[Vec3],
    labels: &[Part],
    per_part: usize,
) -> Result<PointCloud, CohortError> {
    let mut out = PointCloud {
        points: Vec::with_capacity(per_part * Part::ALL.len()),
        labels: Vec::with_capacity(per_part * Part::ALL.len()),
    };
    for part in Part::ALL {
        let subset: Vec<Vec3> = points
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == part)
            .map(|(p, _)| *p)
            .collect();
        for i in farthest_point_sampling(&subset, per_part)? {
            out.points.push(subset[i]);
            out.labels.push(part);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SimSettings;
    use crate::geometry::{build_phantom, PhantomConfig};

    #[test]
    fn cv_samples_in_range_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let cv = sample_cv(&mut rng).unwrap();
            assert!(cv_in_ranges(&cv), "{cv:?}");
        }
    }

    #[test]
    fn cv_sampling_is_deterministic() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_cv(&mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn endocardial_mean_unaffected_by_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_cv(&mut rng).unwrap().endo)
            .sum::<f64>()
            / n as f64;
        // uniform mean (120 + 179) / 2; MC standard error is about 0.05
        assert!((mean - 149.5).abs() < 1.0, "{mean}");
    }

    #[test]
    fn conditions_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            assert!(Conditions::sample(&mut rng).is_valid());
        }
    }

    #[test]
    fn split_counts_follow_sixty_ten_thirty() {
        assert_eq!(split_counts(10), (6, 1, 3));
        assert_eq!(split_counts(100), (60, 10, 30));
        assert_eq!(split_counts(2), (1, 1, 0));
        let splits = assign_splits(10, 1);
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 6);
        assert_eq!(splits, assign_splits(10, 1));
    }

    #[test]
    fn root_nodes_on_phantom() {
        let (mesh, _) = build_phantom(&PhantomConfig::default()).unwrap();
        let roots = place_root_nodes(&mesh).unwrap();
        for (k, &node) in roots.nodes().iter().enumerate() {
            assert_eq!(mesh.node_labels()[node], RootNodeSet::expected_label(k));
        }
        assert_eq!(place_root_nodes(&mesh).unwrap(), roots);
        let mut distinct = roots.nodes().to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), N_ROOTS);
    }

    #[test]
    fn fps_full_sample_is_a_permutation() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| [(i % 7) as f64, (i / 7) as f64 * 0.5, ((i * 13) % 5) as f64])
            .collect();
        let mut idx = farthest_point_sampling(&pts, pts.len()).unwrap();
        assert_eq!(idx, farthest_point_sampling(&pts, pts.len()).unwrap());
        idx.sort_unstable();
        assert_eq!(idx, (0..50).collect::<Vec<_>>());
        assert!(matches!(
            farthest_point_sampling(&pts, 51),
            Err(CohortError::TooManyPoints { .. })
        ));
    }

    #[test]
    fn small_cohort_round_trips_through_jsonl() {
        let (mesh, frame) = build_phantom(&PhantomConfig {
            resolution: 0.6,
            ..PhantomConfig::default()
        })
        .unwrap();
        let model = ForwardModel::new(mesh, frame, SimSettings::default()).unwrap();
        let meshes = vec![CohortMesh { id: 0, model }];
        let cohort = generate_cohort(&meshes, 3, 42).unwrap();
        assert_eq!(cohort.subjects.len(), 3);
        let back = Cohort::from_jsonl(&cohort.to_jsonl()).unwrap();
        assert_eq!(back, cohort);
        assert!(matches!(
            generate_cohort(&meshes, 0, 1),
            Err(CohortError::Empty)
        ));
    }
}
