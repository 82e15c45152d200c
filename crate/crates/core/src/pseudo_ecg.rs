//! Pseudo-ECG forward model: dipole sources from the activation front,
//! projected on point electrodes through centroid-based lead fields.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::ActivationTimeMap;
use crate::geometry::TetMesh;
use crate::vec3::{self, Mat3, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum EcgError {
    #[error("tet {tet} is degenerate (volume {volume:e})")]
    DegenerateTet { tet: usize, volume: f64 },
    #[error("electrode {name} lies {distance:.3e} cm from tet {tet} centroid (inside tissue)")]
    ElectrodeInTissue {
        name: &'static str,
        tet: usize,
        distance: f64,
    },
    #[error("electrode {name} is {distance:.3} cm from node {node}; at least {min} cm required")]
    ElectrodeTooClose {
        name: &'static str,
        node: usize,
        distance: f64,
        min: f64,
    },
    #[error("duration {duration} s is shorter than the last activation at {max_time} s")]
    DurationTooShort { duration: f64, max_time: f64 },
    #[error("{needed} samples needed but the record holds only {n_out}")]
    RecordTooShort { needed: usize, n_out: usize },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("activation map has {got} nodes, mesh has {expected}")]
    NodeCount { got: usize, expected: usize },
    #[error("ecg csv: {0}")]
    Csv(String),
}

pub const ELECTRODE_NAMES: [&str; 9] = ["RA", "LA", "LL", "V1", "V2", "V3", "V4", "V5", "V6"];
pub const LEAD_NAMES: [&str; 8] = ["I", "II", "V1", "V2", "V3", "V4", "V5", "V6"];
pub const N_LEADS: usize = 8;
const RA: usize = 0;
const LA: usize = 1;
const LL: usize = 2;

/// Minimum electrode-to-node distance in cm.
pub const MIN_ELECTRODE_CLEARANCE: f64 = 1.0;

/// Electrode placement relative to the mesh bounding box: `(0,0,0)` is the
/// minimum corner and `(1,1,1)` the maximum corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeConfig {
    #[serde(rename = "RA")]
    pub ra: Vec3,
    #[serde(rename = "LA")]
    pub la: Vec3,
    #[serde(rename = "LL")]
    pub ll: Vec3,
    #[serde(rename = "V1")]
    pub v1: Vec3,
    #[serde(rename = "V2")]
    pub v2: Vec3,
    #[serde(rename = "V3")]
    pub v3: Vec3,
    #[serde(rename = "V4")]
    pub v4: Vec3,
    #[serde(rename = "V5")]
    pub v5: Vec3,
    #[serde(rename = "V6")]
    pub v6: Vec3,
}

impl Default for ElectrodeConfig {
    /// Limb leads far from the heart, precordial arc sweeping from the
    /// right-anterior (`-x`, `+y`) side to the left-lateral (`+x`) side.
    fn default() -> Self {
        ElectrodeConfig {
            ra: [-1.0, 0.8, 1.6],
            la: [2.0, 0.8, 1.6],
            ll: [0.6, 0.6, -1.5],
            v1: [0.30, 1.45, 0.50],
            v2: [0.50, 1.50, 0.50],
            v3: [0.70, 1.45, 0.45],
            v4: [0.90, 1.35, 0.40],
            v5: [1.15, 1.10, 0.40],
            v6: [1.35, 0.70, 0.40],
        }
    }
}

impl ElectrodeConfig {
    pub fn relative_positions(&self) -> [Vec3; 9] {
        [
            self.ra, self.la, self.ll, self.v1, self.v2, self.v3, self.v4, self.v5, self.v6,
        ]
    }
}

/// Absolute electrode positions in cm, ordered as [`ELECTRODE_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeSet {
    pub positions: [Vec3; 9],
}

impl ElectrodeSet {
    /// Maps the relative configuration onto the mesh bounding box and checks clearance.
    pub fn place(mesh: &TetMesh, config: &ElectrodeConfig) -> Result<Self, EcgError> {
        let (lo, hi) = mesh.bounding_box();
        let positions = config.relative_positions().map(|rel| {
            [
                lo[0] + rel[0] * (hi[0] - lo[0]),
                lo[1] + rel[1] * (hi[1] - lo[1]),
                lo[2] + rel[2] * (hi[2] - lo[2]),
            ]
        });
        Self::new(mesh, positions)
    }

    pub fn new(mesh: &TetMesh, positions: [Vec3; 9]) -> Result<Self, EcgError> {
        for (k, e) in positions.iter().enumerate() {
            let (node, distance) = mesh
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, p)| (i, vec3::dist(*p, *e)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            if !(distance > MIN_ELECTRODE_CLEARANCE) {
                return Err(EcgError::ElectrodeTooClose {
                    name: ELECTRODE_NAMES[k],
                    node,
                    distance,
                    min: MIN_ELECTRODE_CLEARANCE,
                });
            }
        }
        Ok(ElectrodeSet { positions })
    }

    pub fn transformed(&self, rotation: &Mat3, shift: Vec3) -> Self {
        ElectrodeSet {
            positions: self
                .positions
                .map(|p| vec3::add(vec3::mat_vec(rotation, p), shift)),
        }
    }
}

/// Gradients of the four linear shape functions of a tet (1/cm).
pub fn shape_gradients(p: [Vec3; 4]) -> Option<[Vec3; 4]> {
    let e1 = vec3::sub(p[1], p[0]);
    let e2 = vec3::sub(p[2], p[0]);
    let e3 = vec3::sub(p[3], p[0]);
    let det = vec3::det3(e1, e2, e3);
    let scale = [e1, e2, e3]
        .iter()
        .map(|e| vec3::norm(*e))
        .fold(0.0, f64::max);
    if !(det.abs() > 1e-12 * scale * scale * scale) {
        return None;
    }
    let g1 = vec3::scale(vec3::cross(e2, e3), 1.0 / det);
    let g2 = vec3::scale(vec3::cross(e3, e1), 1.0 / det);
    let g3 = vec3::scale(vec3::cross(e1, e2), 1.0 / det);
    let g0 = vec3::scale(vec3::add(vec3::add(g1, g2), g3), -1.0);
    Some([g0, g1, g2, g3])
}

/// Gradient of the linear interpolant of `vm` over a tet with shape gradients `grads`.
/// Constant fields give exactly zero.
#[inline]
pub fn interpolant_gradient(grads: &[Vec3; 4], vm: [f64; 4]) -> Vec3 {
    let mut g = [0.0; 3];
    for k in 1..4 {
        let d = vm[k] - vm[0];
        if d != 0.0 {
            g = vec3::add(g, vec3::scale(grads[k], d));
        }
    }
    g
}

/// ∇V_m of one tet for nodal values `vm`.
pub fn element_vm_gradient(points: [Vec3; 4], vm: [f64; 4]) -> Result<Vec3, EcgError> {
    let grads = shape_gradients(points).ok_or(EcgError::DegenerateTet {
        tet: 0,
        volume: vec3::tet_volume(points[0], points[1], points[2], points[3]),
    })?;
    Ok(interpolant_gradient(&grads, vm))
}

/// `S_j ∇_c (1/r_j)` for a source at `centroid` with normalized volume `weight`.
#[inline]
fn lead_vector(centroid: Vec3, electrode: Vec3, weight: f64) -> (Vec3, f64) {
    let d = vec3::sub(centroid, electrode);
    let r = vec3::norm(d);
    (vec3::scale(d, -weight / (r * r * r)), r)
}

#[inline]
fn source_term(grad_vm: Vec3, lead: Vec3) -> f64 {
    -vec3::dot(grad_vm, lead)
}

/// Per-tet geometry reused across time samples and electrodes.
#[derive(Debug, Clone)]
pub struct LeadField {
    tets: Vec<[usize; 4]>,
    grads: Vec<[Vec3; 4]>,
    /// `leads[e][j]`: lead vector of tet `j` seen from electrode `e`.
    leads: Vec<Vec<Vec3>>,
}

impl LeadField {
    pub fn new(mesh: &TetMesh, electrodes: &[Vec3]) -> Result<Self, EcgError> {
        let weights = normalized_volumes(mesh);
        let mut grads = Vec::with_capacity(mesh.n_tets());
        for t in 0..mesh.n_tets() {
            grads.push(
                shape_gradients(mesh.tet_points(t)).ok_or(EcgError::DegenerateTet {
                    tet: t,
                    volume: mesh.tet_volume(t),
                })?,
            );
        }
        let mut leads = Vec::with_capacity(electrodes.len());
        for (k, &e) in electrodes.iter().enumerate() {
            let mut per_tet = Vec::with_capacity(mesh.n_tets());
            for (t, &w) in weights.iter().enumerate() {
                let (lead, r) = lead_vector(mesh.tet_centroid(t), e, w);
                if !(r >= 1e-6) {
                    return Err(EcgError::ElectrodeInTissue {
                        name: ELECTRODE_NAMES.get(k).copied().unwrap_or("electrode"),
                        tet: t,
                        distance: r,
                    });
                }
                per_tet.push(lead);
            }
            leads.push(per_tet);
        }
        Ok(LeadField {
            tets: mesh.tets().to_vec(),
            grads,
            leads,
        })
    }

    /// Scales every `S_j` by `k`.
    pub fn scale_sources(&mut self, k: f64) {
        for per_tet in &mut self.leads {
            for l in per_tet {
                *l = vec3::scale(*l, k);
            }
        }
    }

    /// Unipolar potentials `phi[e][k]` at sample times `k * dt`, `k < n_samples`.
    pub fn potentials(&self, atm: &ActivationTimeMap, dt: f64, n_samples: usize) -> Vec<Vec<f64>> {
        let mut phi = vec![vec![0.0; n_samples]; self.leads.len()];
        for (j, tet) in self.tets.iter().enumerate() {
            let times = tet.map(|v| atm.times[v]);
            let t_lo = times.iter().copied().fold(f64::INFINITY, f64::min);
            let t_hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // first sample that may see a mixed state; the exact test is below
            let mut k = ((t_lo / dt).floor().max(0.0) as usize).saturating_sub(1);
            while k < n_samples {
                let t = k as f64 * dt;
                if t >= t_hi {
                    break;
                }
                let vm = times.map(|ti| if ti <= t { 1.0 } else { 0.0 });
                let grad = interpolant_gradient(&self.grads[j], vm);
                if grad != [0.0; 3] {
                    for (e, per_tet) in self.leads.iter().enumerate() {
                        phi[e][k] += source_term(grad, per_tet[j]);
                    }
                }
                k += 1;
            }
        }
        phi
    }

    /// Like [`LeadField::potentials`] with each node's transmembrane potential
    /// rising linearly from 0 to 1 over `width` seconds centred on its
    /// activation time. `width = 0` is the step response.
    pub fn potentials_ramp(
        &self,
        atm: &ActivationTimeMap,
        dt: f64,
        n_samples: usize,
        width: f64,
    ) -> Vec<Vec<f64>> {
        if width <= 0.0 {
            return self.potentials(atm, dt, n_samples);
        }
        let half = 0.5 * width;
        let mut phi = vec![vec![0.0; n_samples]; self.leads.len()];
        for (j, tet) in self.tets.iter().enumerate() {
            let times = tet.map(|v| atm.times[v]);
            let t_lo = times.iter().copied().fold(f64::INFINITY, f64::min) - half;
            let t_hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max) + half;
            let mut k = ((t_lo / dt).floor().max(0.0) as usize).saturating_sub(1);
            while k < n_samples {
                let t = k as f64 * dt;
                if t >= t_hi {
                    break;
                }
                let vm = times.map(|ti| ((t - ti) / width + 0.5).clamp(0.0, 1.0));
                let grad = interpolant_gradient(&self.grads[j], vm);
                if grad != [0.0; 3] {
                    for (e, per_tet) in self.leads.iter().enumerate() {
                        phi[e][k] += source_term(grad, per_tet[j]);
                    }
                }
                k += 1;
            }
        }
        phi
    }
}

/// `S_j = vol_j / mean(vol)`.
pub fn normalized_volumes(mesh: &TetMesh) -> Vec<f64> {
    let vols: Vec<f64> = (0..mesh.n_tets()).map(|t| mesh.tet_volume(t)).collect();
    let mean = vols.iter().sum::<f64>() / vols.len().max(1) as f64;
    vols.iter().map(|v| v / mean).collect()
}

/// Unipolar potential at `electrode` and time `t`, summed tet by tet.
pub fn unipolar_potential(
    mesh: &TetMesh,
    atm: &ActivationTimeMap,
    electrode: Vec3,
    t: f64,
) -> Result<f64, EcgError> {
    if atm.times.len() != mesh.n_nodes() {
        return Err(EcgError::NodeCount {
            got: atm.times.len(),
            expected: mesh.n_nodes(),
        });
    }
    let weights = normalized_volumes(mesh);
    let mut phi = 0.0;
    for (j, tet) in mesh.tets().iter().enumerate() {
        let grads = shape_gradients(mesh.tet_points(j)).ok_or(EcgError::DegenerateTet {
            tet: j,
            volume: mesh.tet_volume(j),
        })?;
        let (lead, r) = lead_vector(mesh.tet_centroid(j), electrode, weights[j]);
        if !(r >= 1e-6) {
            return Err(EcgError::ElectrodeInTissue {
                name: "electrode",
                tet: j,
                distance: r,
            });
        }
        let vm = tet.map(|v| if atm.times[v] <= t { 1.0 } else { 0.0 });
        phi += source_term(interpolant_gradient(&grads, vm), lead);
    }
    Ok(phi)
}

/// Eight-lead record, zero-padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    /// Sample spacing in seconds.
    pub dt: f64,
    /// `leads[l][k]`, ordered as [`LEAD_NAMES`].
    pub leads: Vec<Vec<f64>>,
    /// `mask[l][k]` is true for samples inside the simulated window.
    pub mask: Vec<Vec<bool>>,
}

/// Limb and precordial leads from nine unipolar potentials, without normalization.
pub fn raw_leads(phi: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = phi[RA].len();
    let wct: Vec<f64> = (0..n)
        .map(|k| (phi[RA][k] + phi[LA][k] + phi[LL][k]) / 3.0)
        .collect();
    let mut leads = Vec::with_capacity(N_LEADS);
    leads.push((0..n).map(|k| phi[LA][k] - phi[RA][k]).collect());
    leads.push((0..n).map(|k| phi[LL][k] - phi[RA][k]).collect());
    for v in &phi[3..9] {
        leads.push((0..n).map(|k| v[k] - wct[k]).collect());
    }
    leads
}

impl EcgRecord {
    /// Normalizes all leads by one common factor and pads to `n_out` samples.
    pub fn from_raw_leads(mut leads: Vec<Vec<f64>>, dt: f64, n_out: usize) -> Self {
        let n_valid = leads.first().map_or(0, Vec::len);
        let peak = leads.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for lead in &mut leads {
            if peak > 0.0 {
                for v in lead.iter_mut() {
                    *v /= peak;
                }
            }
            lead.resize(n_out, 0.0);
        }
        let mask = (0..leads.len())
            .map(|_| (0..n_out).map(|k| k < n_valid).collect())
            .collect();
        EcgRecord { dt, leads, mask }
    }

    pub fn n_samples(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    /// Number of samples valid in every lead.
    pub fn valid_len(&self) -> usize {
        (0..self.n_samples())
            .take_while(|&k| self.mask.iter().all(|m| m[k]))
            .count()
    }

    pub fn peak(&self) -> f64 {
        self.leads
            .iter()
            .zip(&self.mask)
            .flat_map(|(l, m)| l.iter().zip(m).filter(|(_, &m)| m).map(|(v, _)| v.abs()))
            .fold(0.0, f64::max)
    }

    /// One row per sample: time, the eight leads, then one 0/1 mask column per lead.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s");
        for name in LEAD_NAMES {
            let _ = write!(out, ",{name}");
        }
        for name in LEAD_NAMES {
            let _ = write!(out, ",mask_{name}");
        }
        out.push('\n');
        for k in 0..self.n_samples() {
            let _ = write!(out, "{}", k as f64 * self.dt);
            for lead in &self.leads {
                let _ = write!(out, ",{}", lead[k]);
            }
            for m in &self.mask {
                let _ = write!(out, ",{}", u8::from(m[k]));
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`EcgRecord::to_csv`] output. Lines starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<Self, EcgError> {
        let bad = |m: String| EcgError::Csv(m);
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let expected = format!(
            "t_s,{},{}",
            LEAD_NAMES.join(","),
            LEAD_NAMES.map(|n| format!("mask_{n}")).join(",")
        );
        if header.trim() != expected {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut leads = vec![Vec::new(); N_LEADS];
        let mut mask = vec![Vec::new(); N_LEADS];
        let mut times = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 2 * N_LEADS + 1 {
                return Err(bad(format!("row {row}: {} columns", cols.len())));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {row}: {e}")))
            };
            times.push(parse(cols[0])?);
            for l in 0..N_LEADS {
                leads[l].push(parse(cols[l + 1])?);
                mask[l].push(match cols[N_LEADS + 1 + l].trim() {
                    "1" => true,
                    "0" => false,
                    other => return Err(bad(format!("row {row}: mask {other:?}"))),
                });
            }
        }
        let dt = if times.len() > 1 {
            times[1] - times[0]
        } else {
            1e-3
        };
        Ok(EcgRecord { dt, leads, mask })
    }
}

/// Samples covering `[0, duration)` at spacing `dt`.
pub fn valid_samples(duration: f64, dt: f64) -> usize {
    ((duration / dt).ceil() as usize).max(1)
}

/// Full forward pass from activation times to a normalized, padded record.
pub fn compute_ecg(
    mesh: &TetMesh,
    atm: &ActivationTimeMap,
    electrodes: &ElectrodeSet,
    dt: f64,
    duration: f64,
    n_out: usize,
) -> Result<EcgRecord, EcgError> {
    let field = LeadField::new(mesh, &electrodes.positions)?;
    compute_ecg_with(&field, atm, dt, duration, n_out)
}

/// Like [`compute_ecg`] with a precomputed lead field.
pub fn compute_ecg_with(
    field: &LeadField,
    atm: &ActivationTimeMap,
    dt: f64,
    duration: f64,
    n_out: usize,
) -> Result<EcgRecord, EcgError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EcgError::BadTimeStep(dt));
    }
    if duration < atm.max_time {
        return Err(EcgError::DurationTooShort {
            duration,
            max_time: atm.max_time,
        });
    }
    let needed = valid_samples(duration, dt);
    if needed > n_out {
        return Err(EcgError::RecordTooShort { needed, n_out });
    }
    let phi = field.potentials(atm, dt, needed);
    Ok(EcgRecord::from_raw_leads(raw_leads(&phi), dt, n_out))
}

/// [`compute_ecg_with`] using [`LeadField::potentials_ramp`].
pub fn compute_ecg_ramp(
    field: &LeadField,
    atm: &ActivationTimeMap,
    dt: f64,
    n_out: usize,
    width: f64,
) -> Result<EcgRecord, EcgError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EcgError::BadTimeStep(dt));
    }
    let needed = valid_samples(atm.max_time, dt);
    if needed > n_out {
        return Err(EcgError::RecordTooShort { needed, n_out });
    }
    let phi = field.potentials_ramp(atm, dt, needed, width);
    Ok(EcgRecord::from_raw_leads(raw_leads(&phi), dt, n_out))
}
