//! Training losses and evaluation metrics: EMD, point-cloud reconstruction,
//! ECG MAE, KL divergence, velocity-normalized CV error and root-node error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{PointCloud, CV_RANGES};
use crate::eikonal::{RootNodeSet, N_LV_ROOTS, N_ROOTS};
use crate::geometry::{ConductionVelocities, Part, TetMesh};
use crate::pseudo_ecg::EcgRecord;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("point sets differ in size: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("class {0:?} missing from a point cloud")]
    MissingClass(Part),
    #[error("ECG shapes differ")]
    EcgShape,
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("ground-truth velocity component {0} is not positive")]
    ZeroVelocity(usize),
    #[error("loss weight {0} must be positive")]
    BadWeight(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EmdMode {
    Exact,
    /// Auction assignment certified within `1 + rel` of the optimum.
    Approx {
        rel: f64,
    },
}

impl EmdMode {
    pub const DEFAULT_APPROX: EmdMode = EmdMode::Approx { rel: 0.05 };
}

/// Optimal assignment for a square cost matrix: `assign[i]` is the column
/// matched to row `i`. O(n³) shortest augmenting paths with potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based rows/cols, column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Result of an auction run: assignment, its cost, and a lower bound on the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionResult {
    pub assign: Vec<usize>,
    pub cost: f64,
    pub lower_bound: f64,
}

/// ε-scaling forward auction, stopped once `cost <= (1 + rel) * lower_bound`.
/// The bound is the dual objective of the final prices, so the guarantee
/// holds against the true optimum.
pub fn auction(cost: &[Vec<f64>], rel: f64) -> AuctionResult {
    let n = cost.len();
    if n == 0 {
        return AuctionResult {
            assign: Vec::new(),
            cost: 0.0,
            lower_bound: 0.0,
        };
    }
    let c_max = cost.iter().flatten().fold(0.0f64, |m, &c| m.max(c.abs()));
    let abs_tol = 1e-12 * c_max.max(1.0) * n as f64;
    let mut prices = vec![0.0; n];
    let mut eps = (c_max / 4.0).max(f64::MIN_POSITIVE);
    loop {
        let mut owner: Vec<Option<usize>> = vec![None; n];
        let mut assign: Vec<Option<usize>> = vec![None; n];
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            // benefit is -cost
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, c) in cost[i].iter().enumerate() {
                let value = -c - prices[j];
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            let increment = if second.is_finite() {
                best - second
            } else {
                0.0
            };
            prices[best_j] += increment + eps;
            if let Some(prev) = owner[best_j].replace(i) {
                assign[prev] = None;
                queue.push(prev);
            }
            assign[i] = Some(best_j);
        }
        let assign: Vec<usize> = assign
            .into_iter()
            .map(|a| a.expect("all bidders assigned"))
            .collect();
        let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let dual: f64 = cost
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&prices)
                    .map(|(c, p)| -c - p)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            + prices.iter().sum::<f64>();
        let lower_bound = -dual;
        if total <= (1.0 + rel) * lower_bound || total - lower_bound <= abs_tol || eps < abs_tol {
            return AuctionResult {
                assign,
                cost: total,
                lower_bound,
            };
        }
        eps /= 4.0;
    }
}

fn distance_matrix(a: &[Vec3], b: &[Vec3]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|p| b.iter().map(|q| vec3::dist(*p, *q)).collect())
        .collect()
}

/// Optimal one-to-one matching of `a` onto `b` under Euclidean cost.
pub fn emd_assignment(a: &[Vec3], b: &[Vec3], mode: EmdMode) -> Result<Vec<usize>, LossError> {
    if a.len() != b.len() {
        return Err(LossError::SizeMismatch(a.len(), b.len()));
    }
    if a.iter().chain(b).flatten().any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite("emd"));
    }
    let cost = distance_matrix(a, b);
    Ok(match mode {
        EmdMode::Exact => hungarian(&cost),
        EmdMode::Approx { rel } => auction(&cost, rel).assign,
    })
}

/// Mean matched distance between two equal-size point sets.
pub fn emd(a: &[Vec3], b: &[Vec3], mode: EmdMode) -> Result<f64, LossError> {
    let assign = emd_assignment(a, b, mode)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| vec3::dist(a[i], b[j]))
        .sum();
    Ok(total / a.len() as f64)
}

fn class_points(pc: &PointCloud, part: Part) -> Result<Vec<Vec3>, LossError> {
    let pts = pc.of_part(part);
    if pts.is_empty() {
        return Err(LossError::MissingClass(part));
    }
    Ok(pts)
}

/// Sum over ventricles of coarse EMD plus `alpha` times dense EMD.
pub fn pc_recon_loss(
    pred_coarse: &PointCloud,
    pred_dense: &PointCloud,
    gt_coarse: &PointCloud,
    gt_dense: &PointCloud,
    alpha: f64,
    mode: EmdMode,
) -> Result<f64, LossError> {
    let mut total = 0.0;
    for part in Part::ALL {
        let coarse = emd(
            &class_points(pred_coarse, part)?,
            &class_points(gt_coarse, part)?,
            mode,
        )?;
        let dense = emd(
            &class_points(pred_dense, part)?,
            &class_points(gt_dense, part)?,
            mode,
        )?;
        total += coarse + alpha * dense;
    }
    Ok(total)
}

/// Mean absolute error over all samples, or only over samples valid in `gt`.
pub fn ecg_mae(pred: &EcgRecord, gt: &EcgRecord, masked: bool) -> Result<f64, LossError> {
    if pred.leads.len() != gt.leads.len()
        || pred
            .leads
            .iter()
            .zip(&gt.leads)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(LossError::EcgShape);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, g), m) in pred.leads.iter().zip(&gt.leads).zip(&gt.mask) {
        for k in 0..g.len() {
            if !masked || m[k] {
                sum += (p[k] - g[k]).abs();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// KL divergence of a diagonal Gaussian from the standard normal.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64, LossError> {
    if mu.len() != logvar.len() {
        return Err(LossError::SizeMismatch(mu.len(), logvar.len()));
    }
    if mu.iter().chain(logvar).any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite("kl_gaussian"));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum())
}

/// Per-component relative error in percent, plus the mean of the four.
pub fn vn_mae_cv(
    pred: &ConductionVelocities,
    gt: &ConductionVelocities,
) -> Result<([f64; 4], f64), LossError> {
    let p = pred.as_array();
    let g = gt.as_array();
    let mut out = [0.0; 4];
    for k in 0..4 {
        if g[k] <= 0.0 || !g[k].is_finite() {
            return Err(LossError::ZeroVelocity(k));
        }
        out[k] = 100.0 * (p[k] - g[k]).abs() / g[k];
    }
    Ok((out, out.iter().sum::<f64>() / 4.0))
}

pub fn root_positions(mesh: &TetMesh, roots: &RootNodeSet) -> [Vec3; N_ROOTS] {
    roots.nodes().map(|i| mesh.nodes()[i])
}

/// Mean Euclidean distance per ventricle group `(LV, RV)`.
pub fn rn_error(pred: &[Vec3; N_ROOTS], gt: &[Vec3; N_ROOTS]) -> (f64, f64) {
    let d: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| vec3::dist(*p, *g))
        .collect();
    let lv = d[..N_LV_ROOTS].iter().sum::<f64>() / N_LV_ROOTS as f64;
    let rv = d[N_LV_ROOTS..].iter().sum::<f64>() / (N_ROOTS - N_LV_ROOTS) as f64;
    (lv, rv)
}

/// Coordinate-wise MAE over all 21 root-node coordinates.
pub fn rn_mae(pred: &[Vec3; N_ROOTS], gt: &[Vec3; N_ROOTS]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| (0..3).map(move |c| (p[c] - g[c]).abs()))
        .sum();
    sum / (3 * N_ROOTS) as f64
}

/// Expected `(LV, RV)` error of guessing a uniformly random endocardial node
/// of the right ventricle for every root.
pub fn random_endo_rn_baseline(mesh: &TetMesh, gt: &[Vec3; N_ROOTS]) -> (f64, f64) {
    let mut group = [0.0; 2];
    for (k, g) in gt.iter().enumerate() {
        let part = RootNodeSet::part_of(k);
        let pool = mesh.nodes_with_label(part.endo_label());
        let mean = pool
            .iter()
            .map(|&i| vec3::dist(mesh.nodes()[i], *g))
            .sum::<f64>()
            / pool.len().max(1) as f64;
        group[part.index()] += mean;
    }
    (
        group[0] / N_LV_ROOTS as f64,
        group[1] / (N_ROOTS - N_LV_ROOTS) as f64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub pc: f64,
    pub ecg: f64,
    pub kl: f64,
    pub cv: f64,
    pub inf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            pc: 0.1,
            ecg: 0.1,
            kl: 0.02,
            cv: 0.2,
            inf: 0.01,
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<(), LossError> {
        let named = [
            ("alpha", self.alpha),
            ("pc", self.pc),
            ("ecg", self.ecg),
            ("kl", self.kl),
            ("cv", self.cv),
            ("inf", self.inf),
        ];
        for (name, w) in named {
            if !(w > 0.0 && w.is_finite()) {
                return Err(LossError::BadWeight(name));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms for one subject or batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub pc: f64,
    pub ecg: f64,
    pub kl: f64,
    pub rn: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTotals {
    pub cvae: f64,
    pub inf: f64,
    pub total: f64,
}

pub fn composite_losses(parts: &LossParts, w: &LossWeights) -> Result<LossTotals, LossError> {
    let all = [parts.pc, parts.ecg, parts.kl, parts.rn, parts.cv];
    if all.iter().any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite("composite_losses"));
    }
    let cvae = w.pc * parts.pc + w.ecg * parts.ecg + w.kl * parts.kl;
    let inf = parts.rn + w.cv * parts.cv;
    Ok(LossTotals {
        cvae,
        inf,
        total: cvae + w.inf * inf,
    })
}

/// Midpoint of each sampling range.
pub fn midpoint_cv() -> ConductionVelocities {
    ConductionVelocities::from_array(CV_RANGES.map(|(lo, hi)| 0.5 * (lo + hi)))
}

/// Piece of a piecewise-linear density `a + b v` on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct LinearPiece {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

/// Antiderivative of `(a + b v)(m - v) / v`.
fn below_m(p: &LinearPiece, m: f64, v: f64) -> f64 {
    p.a * m * v.ln() + (p.b * m - p.a) * v - 0.5 * p.b * v * v
}

/// `E[100 |m - V| / V]` for a piecewise-linear density, in closed form.
fn expected_relative_error(pieces: &[LinearPiece], m: f64) -> f64 {
    let mut total = 0.0;
    for p in pieces {
        // m > v on [lo, min(hi, m)], v > m on [max(lo, m), hi]
        let split = m.clamp(p.lo, p.hi);
        total += below_m(p, m, split) - below_m(p, m, p.lo);
        total -= below_m(p, m, p.hi) - below_m(p, m, split);
    }
    100.0 * total
}

fn uniform_pieces(lo: f64, hi: f64) -> Vec<LinearPiece> {
    vec![LinearPiece {
        lo,
        hi,
        a: 1.0 / (hi - lo),
        b: 0.0,
    }]
}

/// Marginal densities of sheet and normal velocities under uniform sampling
/// restricted to `sheet > normal`.
fn ordered_pair_marginals() -> (Vec<LinearPiece>, Vec<LinearPiece>) {
    let (s_lo, s_hi) = CV_RANGES[1];
    let (n_lo, n_hi) = CV_RANGES[2];
    // area of {n_lo <= n < s, s in [s_lo, s_hi], n <= n_hi}
    let area = {
        let ramp = 0.5 * ((n_hi - n_lo).powi(2) - (s_lo - n_lo).powi(2));
        ramp + (s_hi - n_hi) * (n_hi - n_lo)
    };
    let sheet = vec![
        LinearPiece {
            lo: s_lo,
            hi: n_hi,
            a: -n_lo / area,
            b: 1.0 / area,
        },
        LinearPiece {
            lo: n_hi,
            hi: s_hi,
            a: (n_hi - n_lo) / area,
            b: 0.0,
        },
    ];
    let normal = vec![
        LinearPiece {
            lo: n_lo,
            hi: s_lo,
            a: (s_hi - s_lo) / area,
            b: 0.0,
        },
        LinearPiece {
            lo: s_lo,
            hi: n_hi,
            a: s_hi / area,
            b: -1.0 / area,
        },
    ];
    (sheet, normal)
}

/// Expected per-component error (%) of always predicting the range midpoints,
/// under the cohort's velocity sampling distribution.
pub fn midpoint_baseline() -> [f64; 4] {
    let m = midpoint_cv().as_array();
    let (sheet, normal) = ordered_pair_marginals();
    [
        expected_relative_error(&uniform_pieces(CV_RANGES[0].0, CV_RANGES[0].1), m[0]),
        expected_relative_error(&sheet, m[1]),
        expected_relative_error(&normal, m[2]),
        expected_relative_error(&uniform_pieces(CV_RANGES[3].0, CV_RANGES[3].1), m[3]),
    ]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and sample standard deviation (n - 1 denominator).
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// One row of the summary table: root-node errors in cm, velocity errors in %.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub rn_lv: MeanStd,
    pub rn_rv: MeanStd,
    pub cv: [MeanStd; 4],
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("method,rn_lv_cm_mean,rn_lv_cm_std,rn_rv_cm_mean,rn_rv_cm_std");
    for name in ConductionVelocities::NAMES {
        let _ = write!(out, ",cv_{name}_pct_mean,cv_{name}_pct_std");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.method, r.rn_lv.mean, r.rn_lv.std, r.rn_rv.mean, r.rn_rv.std
        );
        for c in &r.cv {
            let _ = write!(out, ",{:.6},{:.6}", c.mean, c.std);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                [
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ]
            })
            .collect()
    }

    #[test]
    fn emd_identity_and_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_set(&mut rng, 10);
        assert_eq!(emd(&a, &a, EmdMode::Exact).unwrap(), 0.0);
        let d = emd(&[[0.0, 0.0, 0.0]], &[[3.0, 4.0, 0.0]], EmdMode::Exact).unwrap();
        assert_eq!(d, 5.0);
        assert_eq!(
            emd(&a, &a[..3], EmdMode::Exact),
            Err(LossError::SizeMismatch(10, 3))
        );
    }

    #[test]
    fn hungarian_small_known() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn auction_bounds_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 5, 40] {
            let a = random_set(&mut rng, n);
            let b = random_set(&mut rng, n);
            let exact = emd(&a, &b, EmdMode::Exact).unwrap();
            let approx = emd(&a, &b, EmdMode::DEFAULT_APPROX).unwrap();
            assert!(approx >= exact - 1e-12);
            assert!(approx <= 1.05 * exact + 1e-12);
        }
    }

    #[test]
    fn ecg_mae_offset_and_mask() {
        let gt = EcgRecord::from_raw_leads(vec![vec![0.5, -1.0]; 8], 1e-3, 4);
        let mut pred = gt.clone();
        for l in &mut pred.leads {
            for v in l.iter_mut() {
                *v += 0.1;
            }
        }
        assert!((ecg_mae(&pred, &gt, false).unwrap() - 0.1).abs() < 1e-12);
        assert!((ecg_mae(&pred, &gt, true).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(ecg_mae(&gt, &gt, true).unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_gaussian(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(kl_gaussian(&[1.0], &[0.0]).unwrap(), 0.5);
        assert!(kl_gaussian(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn vn_mae_definition() {
        let gt = ConductionVelocities::new(80.0, 40.0, 35.0, 150.0).unwrap();
        let pred = ConductionVelocities::new(88.0, 40.0, 35.0, 150.0).unwrap();
        let (per, mean) = vn_mae_cv(&pred, &gt).unwrap();
        assert!((per[0] - 10.0).abs() < 1e-12);
        assert!((mean - 2.5).abs() < 1e-12);
    }

    #[test]
    fn rn_error_offsets() {
        let gt = [[0.0; 3]; N_ROOTS];
        assert_eq!(rn_error(&gt, &gt), (0.0, 0.0));
        let pred = [[1.0, 0.0, 0.0]; N_ROOTS];
        assert_eq!(rn_error(&pred, &gt), (1.0, 1.0));
        assert!((rn_mae(&pred, &gt) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn composite_with_default_weights() {
        let w = LossWeights::default();
        let zero = composite_losses(&LossParts::default(), &w).unwrap();
        assert_eq!((zero.cvae, zero.inf, zero.total), (0.0, 0.0, 0.0));
        let unit = LossParts {
            pc: 1.0,
            ecg: 1.0,
            kl: 1.0,
            rn: 1.0,
            cv: 1.0,
        };
        let t = composite_losses(&unit, &w).unwrap();
        assert!((t.cvae - 0.22).abs() < 1e-12);
        assert!((t.inf - 1.2).abs() < 1e-12);
        assert!((t.total - 0.232).abs() < 1e-12);
    }

    #[test]
    fn ordered_marginals_integrate_to_one() {
        let (sheet, normal) = ordered_pair_marginals();
        for pieces in [sheet, normal] {
            let mass: f64 = pieces
                .iter()
                .map(|p| p.a * (p.hi - p.lo) + 0.5 * p.b * (p.hi * p.hi - p.lo * p.lo))
                .sum();
            assert!((mass - 1.0).abs() < 1e-12, "{mass}");
        }
    }

    #[test]
    fn uniform_midpoint_error_closed_form() {
        // 100/(b-a) * m ln(m^2/(ab)) for a uniform on [a, b]
        let (a, b) = (120.0f64, 179.0f64);
        let m = 0.5 * (a + b);
        let expect = 100.0 / (b - a) * m * (m * m / (a * b)).ln();
        let got = expected_relative_error(&uniform_pieces(a, b), m);
        assert!((got - expect).abs() < 1e-10, "{got} {expect}");
    }
}
