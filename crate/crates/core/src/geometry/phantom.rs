//! Synthetic biventricular phantom: two truncated ellipsoidal shells
//! meshed on a Kuhn-split cubic lattice, with rule-based fibers.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FiberFrame, Frame, GeometryError, NodeLabel, Part, TetMesh};
use crate::vec3::{self, Vec3};

/// Shape parameters in cm. The LV long axis is `z`; the base plane is `z = 0`
/// and the apex points towards `-z`. The RV sits on the `-x` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// LV cavity semi-axes `[x, y, z]`.
    pub lv_cavity: [f64; 3],
    pub lv_wall: f64,
    /// RV cavity ellipsoid semi-axes `[x, y, z]`, before carving out the LV.
    pub rv_cavity: [f64; 3],
    /// `x` coordinate of the RV ellipsoid centre.
    pub rv_offset: f64,
    pub rv_wall: f64,
    /// Lattice spacing.
    pub resolution: f64,
    /// Interior node jitter as a fraction of `resolution`.
    pub jitter: f64,
    pub seed: u64,
    pub helix_endo_deg: f64,
    pub helix_epi_deg: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            lv_cavity: [2.5, 2.5, 5.0],
            lv_wall: 1.2,
            rv_cavity: [2.6, 3.4, 4.2],
            rv_offset: -2.5,
            rv_wall: 1.0,
            resolution: 0.5,
            jitter: 0.15,
            seed: 0,
            helix_endo_deg: 60.0,
            helix_epi_deg: -60.0,
        }
    }
}

impl PhantomConfig {
    /// Anisotropic rescale of every cavity axis and the RV offset; walls keep their thickness.
    pub fn scaled(&self, s: [f64; 3]) -> PhantomConfig {
        let mut c = self.clone();
        for k in 0..3 {
            c.lv_cavity[k] *= s[k];
            c.rv_cavity[k] *= s[k];
        }
        c.rv_offset *= s[0];
        c
    }

    fn lv_epi(&self) -> [f64; 3] {
        self.lv_cavity.map(|a| a + self.lv_wall)
    }

    fn rv_epi(&self) -> [f64; 3] {
        self.rv_cavity.map(|a| a + self.rv_wall)
    }

    fn rv_center(&self) -> Vec3 {
        [self.rv_offset, 0.0, 0.0]
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::DegenerateConfig(msg));
        let all = self.lv_cavity.iter().chain(&self.rv_cavity).chain([
            &self.lv_wall,
            &self.rv_wall,
            &self.resolution,
        ]);
        if all.clone().any(|v| !v.is_finite() || *v <= 0.0) {
            return bad("axes, walls and resolution must be positive".into());
        }
        if !(0.0..0.3).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 0.3)", self.jitter));
        }
        if self.lv_wall < self.resolution || self.rv_wall < self.resolution {
            return bad(format!(
                "walls ({}, {}) thinner than the resolution {}",
                self.lv_wall, self.rv_wall, self.resolution
            ));
        }
        let lv_epi = self.lv_epi();
        // the RV cavity must bulge past the LV epicardium on the free-wall side
        let rv_reach = -self.rv_offset + self.rv_cavity[0];
        if rv_reach < lv_epi[0] + self.resolution {
            return bad(format!(
                "RV cavity (reach {rv_reach:.3}) does not clear the LV epicardium ({:.3})",
                lv_epi[0]
            ));
        }
        if self.rv_offset + self.rv_cavity[0] + self.rv_wall < -lv_epi[0] {
            return bad("RV cavity detached from the LV".into());
        }
        if self.rv_cavity[2] + self.rv_wall > lv_epi[2] {
            return bad("RV cavity larger than the LV shell along the long axis".into());
        }
        if self.rv_cavity[1] + self.rv_wall > 2.0 * lv_epi[1] {
            return bad("RV cavity wider than twice the LV shell".into());
        }
        Ok(())
    }
}

#[inline]
fn ellipsoid_level(p: Vec3, center: Vec3, axes: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let q = (p[k] - center[k]) / axes[k];
        s += q * q;
    }
    s.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Myocardium,
    LvCavity,
    RvCavity,
    Outside,
}

struct Shape<'a> {
    cfg: &'a PhantomConfig,
    lv_epi: [f64; 3],
    rv_epi: [f64; 3],
    rv_center: Vec3,
}

impl<'a> Shape<'a> {
    fn new(cfg: &'a PhantomConfig) -> Self {
        Shape {
            cfg,
            lv_epi: cfg.lv_epi(),
            rv_epi: cfg.rv_epi(),
            rv_center: cfg.rv_center(),
        }
    }

    fn in_lv_shell(&self, p: Vec3) -> bool {
        ellipsoid_level(p, [0.0; 3], self.lv_epi) < 1.0
    }

    fn region(&self, p: Vec3) -> Region {
        if p[2] >= 0.0 {
            return Region::Outside;
        }
        let in_lv_epi = self.in_lv_shell(p);
        if ellipsoid_level(p, [0.0; 3], self.cfg.lv_cavity) < 1.0 {
            return Region::LvCavity;
        }
        if in_lv_epi {
            return Region::Myocardium;
        }
        if ellipsoid_level(p, self.rv_center, self.cfg.rv_cavity) < 1.0 {
            return Region::RvCavity;
        }
        if ellipsoid_level(p, self.rv_center, self.rv_epi) < 1.0 {
            return Region::Myocardium;
        }
        Region::Outside
    }

    fn bounds(&self) -> (Vec3, Vec3) {
        let c = self.cfg;
        let lo = [
            (c.rv_offset - self.rv_epi[0]).min(-self.lv_epi[0]),
            -self.lv_epi[1].max(self.rv_epi[1]),
            -self.lv_epi[2].max(self.rv_epi[2]),
        ];
        let hi = [
            self.lv_epi[0].max(c.rv_offset + self.rv_epi[0]),
            self.lv_epi[1].max(self.rv_epi[1]),
            0.0,
        ];
        (lo, hi)
    }
}

/// Kuhn split of the unit cube: six tets sharing the main diagonal.
const KUHN: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// `n` anatomies around `base`, each axis scaled by an independent uniform
/// factor in `[1 - spread, 1 + spread]`. Member `m` gets jitter seed `seed + m`.
pub fn phantom_family(
    base: &PhantomConfig,
    n: usize,
    spread: f64,
    seed: u64,
) -> Vec<PhantomConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|m| {
            let s: [f64; 3] = std::array::from_fn(|_| 1.0 + spread * rng.random_range(-1.0..=1.0));
            let mut c = base.scaled(s);
            c.seed = seed.wrapping_add(m as u64);
            c
        })
        .collect()
}

/// Builds a connected, labelled biventricular tet mesh and its fiber frames.
/// Identical configurations produce bit-identical output.
pub fn build_phantom(cfg: &PhantomConfig) -> Result<(TetMesh, FiberFrame), GeometryError> {
    cfg.check()?;
    let shape = Shape::new(cfg);
    let h = cfg.resolution;
    let (lo, hi) = shape.bounds();
    // lattice aligned so that z = 0 is a lattice plane
    let start = [
        (lo[0] / h).floor() - 1.0,
        (lo[1] / h).floor() - 1.0,
        (lo[2] / h).floor() - 1.0,
    ];
    let dims = [
        ((hi[0] / h).ceil() - start[0]) as usize + 2,
        ((hi[1] / h).ceil() - start[1]) as usize + 2,
        ((hi[2] / h).ceil() - start[2]) as usize + 1,
    ];
    let lattice = |i: usize, j: usize, k: usize| -> Vec3 {
        [
            (start[0] + i as f64) * h,
            (start[1] + j as f64) * h,
            (start[2] + k as f64) * h,
        ]
    };
    let key = |i: usize, j: usize, k: usize| (k * dims[1] + j) * dims[0] + i;

    // tets as lattice keys
    let mut raw_tets: Vec<[usize; 4]> = Vec::new();
    for k in 0..dims[2] - 1 {
        for j in 0..dims[1] - 1 {
            for i in 0..dims[0] - 1 {
                for perm in KUHN {
                    let mut corner = [i, j, k];
                    let mut verts = [[0usize; 3]; 4];
                    verts[0] = corner;
                    for (step, &axis) in perm.iter().enumerate() {
                        corner[axis] += 1;
                        verts[step + 1] = corner;
                    }
                    let pts = verts.map(|v| lattice(v[0], v[1], v[2]));
                    if shape.region(vec3::centroid4(pts)) != Region::Myocardium {
                        continue;
                    }
                    let mut tet = verts.map(|v| key(v[0], v[1], v[2]));
                    if vec3::tet_volume(pts[0], pts[1], pts[2], pts[3]) < 0.0 {
                        tet.swap(2, 3);
                    }
                    raw_tets.push(tet);
                }
            }
        }
    }
    let raw_tets = largest_component(raw_tets);
    if raw_tets.is_empty() {
        return Err(GeometryError::DegenerateConfig(
            "no tets inside the myocardium".into(),
        ));
    }

    // compact node numbering in lattice order
    let mut keys: Vec<usize> = raw_tets.iter().flatten().copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let index: HashMap<usize, usize> = keys.iter().enumerate().map(|(n, &k)| (k, n)).collect();
    let mut nodes: Vec<Vec3> = keys
        .iter()
        .map(|&k| {
            let i = k % dims[0];
            let j = (k / dims[0]) % dims[1];
            let kk = k / (dims[0] * dims[1]);
            lattice(i, j, kk)
        })
        .collect();
    let tets: Vec<[usize; 4]> = raw_tets.iter().map(|t| t.map(|k| index[&k])).collect();

    let (node_labels, on_boundary) = label_surfaces(&shape, &nodes, &tets, h);
    let part_labels: Vec<Part> = nodes
        .iter()
        .map(|&p| {
            if ellipsoid_level(p, [0.0; 3], shape.lv_epi) <= 1.0 + 1e-9 {
                Part::Lv
            } else {
                Part::Rv
            }
        })
        .collect();

    if cfg.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let amp = cfg.jitter * h;
        for (p, boundary) in nodes.iter_mut().zip(&on_boundary) {
            // always draw so the stream does not depend on labels
            let d: [f64; 3] = [
                rng.random_range(-amp..=amp),
                rng.random_range(-amp..=amp),
                rng.random_range(-amp..=amp),
            ];
            if !boundary {
                *p = vec3::add(*p, d);
            }
        }
    }

    let mesh = TetMesh::new(nodes, tets, node_labels, part_labels)?;
    let fibers = rule_based_fibers(&mesh, cfg)?;
    Ok((mesh, fibers))
}

/// Keeps the tets of the largest node-connected component.
fn largest_component(tets: Vec<[usize; 4]>) -> Vec<[usize; 4]> {
    let mut parent: HashMap<usize, usize> = HashMap::new();
    fn find(parent: &mut HashMap<usize, usize>, x: usize) -> usize {
        let mut root = x;
        while let Some(&p) = parent.get(&root) {
            if p == root {
                break;
            }
            root = p;
        }
        let mut cur = x;
        while cur != root {
            let next = parent[&cur];
            parent.insert(cur, root);
            cur = next;
        }
        root
    }
    for tet in &tets {
        for &v in tet {
            parent.entry(v).or_insert(v);
        }
        let r0 = find(&mut parent, tet[0]);
        for &v in &tet[1..] {
            let r = find(&mut parent, v);
            if r != r0 {
                let (a, b) = if r < r0 { (r0, r) } else { (r, r0) };
                parent.insert(a, b);
            }
        }
    }
    let roots: Vec<usize> = tets.iter().map(|t| find(&mut parent, t[0])).collect();
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &r in &roots {
        *counts.entry(r).or_default() += 1;
    }
    let Some(best) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&r, _)| r)
    else {
        return Vec::new();
    };
    tets.into_iter()
        .zip(roots)
        .filter(|(_, r)| *r == best)
        .map(|(t, _)| t)
        .collect()
}

/// Labels boundary nodes by the region on the far side of each boundary face.
fn label_surfaces(
    shape: &Shape,
    nodes: &[Vec3],
    tets: &[[usize; 4]],
    h: f64,
) -> (Vec<NodeLabel>, Vec<bool>) {
    let mut faces: HashMap<[usize; 3], (usize, usize)> = HashMap::new();
    for tet in tets {
        for skip in 0..4 {
            let mut f = [0usize; 3];
            let mut n = 0;
            for (k, &v) in tet.iter().enumerate() {
                if k != skip {
                    f[n] = v;
                    n += 1;
                }
            }
            f.sort_unstable();
            let entry = faces.entry(f).or_insert((0, tet[skip]));
            entry.0 += 1;
        }
    }
    let mut boundary: Vec<([usize; 3], usize)> = faces
        .into_iter()
        .filter(|(_, (count, _))| *count == 1)
        .map(|(f, (_, opposite))| (f, opposite))
        .collect();
    boundary.sort_unstable();

    let mut labels = vec![NodeLabel::Interior; nodes.len()];
    let mut on_boundary = vec![false; nodes.len()];
    let rank = |l: NodeLabel| match l {
        NodeLabel::LvEndo => 3,
        NodeLabel::RvEndo => 2,
        NodeLabel::Epi => 1,
        NodeLabel::Interior => 0,
    };
    for (face, opposite) in boundary {
        let [a, b, c] = face.map(|v| nodes[v]);
        let centroid = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
        let mut normal = vec3::normalize(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
            .unwrap_or([0.0, 0.0, 1.0]);
        if vec3::dot(normal, vec3::sub(nodes[opposite], centroid)) > 0.0 {
            normal = vec3::scale(normal, -1.0);
        }
        // step outwards until the probe leaves the geometric myocardium
        let mut region = Region::Outside;
        for step in 1..=8 {
            let probe = vec3::add(centroid, vec3::scale(normal, 0.25 * h * step as f64));
            region = shape.region(probe);
            if region != Region::Myocardium {
                break;
            }
        }
        let label = match region {
            Region::LvCavity => NodeLabel::LvEndo,
            Region::RvCavity => NodeLabel::RvEndo,
            _ => NodeLabel::Epi,
        };
        for v in face {
            on_boundary[v] = true;
            if rank(label) > rank(labels[v]) {
                labels[v] = label;
            }
        }
    }
    (labels, on_boundary)
}

/// Helix angle interpolated linearly across the wall, sheet along the
/// horizontal radial direction of the owning ventricle.
fn rule_based_fibers(mesh: &TetMesh, cfg: &PhantomConfig) -> Result<FiberFrame, GeometryError> {
    let pick = |pred: &dyn Fn(NodeLabel) -> bool| -> Vec<Vec3> {
        mesh.nodes()
            .iter()
            .zip(mesh.node_labels())
            .filter(|(_, l)| pred(**l))
            .map(|(p, _)| *p)
            .collect()
    };
    let lv_endo = pick(&|l| l == NodeLabel::LvEndo);
    let rv_endo = pick(&|l| l == NodeLabel::RvEndo);
    let epi = pick(&|l| l == NodeLabel::Epi);
    // the RV endocardium bounds the septum from the outside
    let lv_outer = pick(&|l| l == NodeLabel::Epi || l == NodeLabel::RvEndo);

    let nearest = |set: &[Vec3], p: Vec3| -> f64 {
        set.iter()
            .map(|q| vec3::dist(*q, p))
            .fold(f64::INFINITY, f64::min)
    };
    let lv_epi = cfg.lv_epi();
    let rv_axis = cfg.rv_center();
    let z = [0.0, 0.0, 1.0];
    let (endo_angle, epi_angle) = (
        cfg.helix_endo_deg.to_radians(),
        cfg.helix_epi_deg.to_radians(),
    );

    let mut frames = Vec::with_capacity(mesh.n_tets());
    for t in 0..mesh.n_tets() {
        let c = mesh.tet_centroid(t);
        let is_lv = ellipsoid_level(c, [0.0; 3], lv_epi) < 1.0;
        let (d_endo, d_epi, axis) = if is_lv {
            (nearest(&lv_endo, c), nearest(&lv_outer, c), [0.0; 3])
        } else {
            (nearest(&rv_endo, c), nearest(&epi, c), rv_axis)
        };
        let depth = if (d_endo + d_epi).is_finite() && d_endo + d_epi > 0.0 {
            d_endo / (d_endo + d_epi)
        } else {
            0.5
        };
        let helix = endo_angle + (epi_angle - endo_angle) * depth;
        let radial =
            vec3::normalize([c[0] - axis[0], c[1] - axis[1], 0.0]).unwrap_or([1.0, 0.0, 0.0]);
        let circ = vec3::cross(z, radial);
        let fiber = vec3::add(vec3::scale(circ, helix.cos()), vec3::scale(z, helix.sin()));
        let fiber = vec3::normalize(fiber).unwrap_or(circ);
        let sheet = radial;
        let normal = vec3::cross(fiber, sheet);
        frames.push(Frame {
            fiber,
            sheet,
            normal,
        });
    }
    FiberFrame::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_phantom_is_valid() {
        let (mesh, fibers) = build_phantom(&PhantomConfig::default()).unwrap();
        mesh.validate().unwrap();
        assert_eq!(fibers.len(), mesh.n_tets());
        for label in [
            NodeLabel::LvEndo,
            NodeLabel::RvEndo,
            NodeLabel::Epi,
            NodeLabel::Interior,
        ] {
            assert!(
                !mesh.nodes_with_label(label).is_empty(),
                "{label:?} missing"
            );
        }
        assert!(mesh.part_labels().contains(&Part::Rv));
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let cfg = PhantomConfig::default();
        let (a, fa) = build_phantom(&cfg).unwrap();
        let (b, fb) = build_phantom(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        let other = PhantomConfig {
            seed: 7,
            ..PhantomConfig::default()
        };
        assert_ne!(build_phantom(&other).unwrap().0.nodes(), a.nodes());
    }

    #[test]
    fn rejects_degenerate_configs() {
        let thin = PhantomConfig {
            lv_wall: 0.2,
            ..PhantomConfig::default()
        };
        assert!(matches!(
            build_phantom(&thin),
            Err(GeometryError::DegenerateConfig(_))
        ));
        let buried = PhantomConfig {
            rv_cavity: [1.0, 3.4, 4.2],
            ..PhantomConfig::default()
        };
        assert!(matches!(
            build_phantom(&buried),
            Err(GeometryError::DegenerateConfig(_))
        ));
        let negative = PhantomConfig {
            resolution: -0.5,
            ..PhantomConfig::default()
        };
        assert!(build_phantom(&negative).is_err());
    }

    #[test]
    fn endocardial_nodes_sit_on_their_cavity() {
        let cfg = PhantomConfig::default();
        let (mesh, _) = build_phantom(&cfg).unwrap();
        let slack = 2.0 * cfg.resolution;
        for &i in &mesh.nodes_with_label(NodeLabel::LvEndo) {
            let p = mesh.nodes()[i];
            let r = ellipsoid_level(p, [0.0; 3], cfg.lv_cavity);
            assert!(
                (r - 1.0).abs() * cfg.lv_cavity[0] < slack,
                "node {i} at level {r}"
            );
        }
    }
}
