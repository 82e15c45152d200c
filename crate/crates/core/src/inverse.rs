//! Forward-model fitting: 1-D grid scans and coordinate descent over the
//! velocities, with optional greedy root-node swaps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::CV_RANGES;
use crate::eikonal::{RootNodeSet, N_ROOTS};
use crate::forward::{ActivationParams, ForwardModel};
use crate::geometry::ConductionVelocities;
use crate::losses::{ecg_mae, midpoint_cv};
use crate::pseudo_ecg::EcgRecord;

#[derive(Debug, Error, PartialEq)]
pub enum InverseError {
    #[error("grid is empty or has a non-positive step")]
    EmptyGrid,
    #[error("velocity index {0} out of range")]
    BadComponent(usize),
    #[error("search spec invalid: {0}")]
    BadSpec(String),
    #[error("starting point could not be simulated: {0}")]
    Start(String),
}

/// Evenly spaced values `lo, lo + step, ...` up to `hi`.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || hi < lo {
        return Vec::new();
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// Masked ECG MAE of the simulation at `params` against `target`.
pub fn objective(
    model: &ForwardModel,
    target: &EcgRecord,
    params: &ActivationParams,
) -> Result<f64, String> {
    smoothed_objective(model, target, params, 0.0)
}

/// [`objective`] with the simulated upstrokes spread over `width` seconds.
pub fn smoothed_objective(
    model: &ForwardModel,
    target: &EcgRecord,
    params: &ActivationParams,
    width: f64,
) -> Result<f64, String> {
    let atm = model.activation(params).map_err(|e| e.to_string())?;
    let ecg = if width > 0.0 {
        model.ecg_ramp(&atm, width)
    } else {
        model.ecg(&atm)
    }
    .map_err(|e| e.to_string())?;
    ecg_mae(&ecg, target, true).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub value: f64,
    /// `None` when the forward model rejected this value.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_value: f64,
    pub best_loss: f64,
    pub curve: Vec<GridPoint>,
}

fn with_component(cv: &ConductionVelocities, k: usize, value: f64) -> ConductionVelocities {
    let mut v = cv.as_array();
    v[k] = value;
    ConductionVelocities::from_array(v)
}

/// Scans one velocity over `values` with everything else held fixed.
/// Ties go to the earliest grid value; failed points are skipped.
pub fn grid_search_1d(
    model: &ForwardModel,
    target: &EcgRecord,
    fixed: &ActivationParams,
    free: usize,
    values: &[f64],
) -> Result<GridResult, InverseError> {
    if free >= 4 {
        return Err(InverseError::BadComponent(free));
    }
    if values.is_empty() {
        return Err(InverseError::EmptyGrid);
    }
    let mut curve = Vec::with_capacity(values.len());
    let mut best: Option<(f64, f64)> = None;
    for &value in values {
        let cv = with_component(&fixed.cv, free, value);
        let loss = if cv.is_valid() {
            let params = ActivationParams {
                cv,
                roots: fixed.roots.clone(),
            };
            objective(model, target, &params).ok()
        } else {
            None
        };
        if let Some(l) = loss {
            if best.is_none_or(|(_, b)| l < b) {
                best = Some((value, l));
            }
        }
        curve.push(GridPoint { value, loss });
    }
    let (best_value, best_loss) = best.ok_or(InverseError::EmptyGrid)?;
    Ok(GridResult {
        best_value,
        best_loss,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RnPool {
    /// Roots stay where the start point puts them.
    Fixed,
    /// Greedy swaps over all endocardial nodes of the matching ventricle.
    Endocardium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpec {
    /// Half-width of the first scan along each coordinate, cm/s.
    pub coarse_half_width: f64,
    /// Half-width of later local scans, cm/s.
    pub local_half_width: f64,
    /// Points per scan.
    pub scan_points: usize,
    /// Scans stop narrowing below this step, cm/s.
    pub min_step: f64,
    /// Golden-section iterations on the final bracket.
    pub golden_iters: usize,
    pub max_cycles: usize,
    pub max_evals: usize,
    pub tolerance: f64,
    /// Upstroke widths in seconds for the smoothed warm-up stages, widest
    /// first. The last stage always uses the step upstroke.
    pub ramp_widths: Vec<f64>,
    pub rn_pool: RnPool,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            coarse_half_width: 60.0,
            local_half_width: 2.0,
            scan_points: 11,
            min_step: 1e-5,
            golden_iters: 20,
            max_cycles: 12,
            max_evals: 6_000,
            tolerance: 1e-6,
            ramp_widths: Vec::new(),
            rn_pool: RnPool::Fixed,
        }
    }
}

impl SearchSpec {
    pub fn check(&self) -> Result<(), InverseError> {
        if !(self.coarse_half_width > 0.0 && self.local_half_width > 0.0 && self.min_step > 0.0) {
            return Err(InverseError::BadSpec("scan widths must be positive".into()));
        }
        if self.scan_points < 3 {
            return Err(InverseError::BadSpec("need at least 3 scan points".into()));
        }
        if self.max_evals == 0 || self.max_cycles == 0 {
            return Err(InverseError::BadSpec("budget must be positive".into()));
        }
        if self.ramp_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(InverseError::BadSpec("ramp widths must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(InverseError::BadSpec(
                "tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchStatus {
    /// Objective fell below tolerance.
    Converged,
    /// A full cycle made no progress.
    Stalled,
    /// Evaluation or cycle budget ran out; the best point so far is returned.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Upstroke width of the stage's objective; 0 for the final stage.
    pub width: f64,
    pub iteration: usize,
    pub evaluations: usize,
    pub cv: ConductionVelocities,
    pub roots: [usize; N_ROOTS],
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub params: ActivationParams,
    pub objective: f64,
    pub evaluations: usize,
    pub status: SearchStatus,
    pub trace: Vec<TraceRow>,
}

impl SearchResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("width_s,iteration,evaluations,v_fiber,v_sheet,v_normal,v_endo");
        for k in 0..N_ROOTS {
            let _ = write!(out, ",rn{k}");
        }
        out.push_str(",objective\n");
        for r in &self.trace {
            let _ = write!(out, "{:e},{},{}", r.width, r.iteration, r.evaluations);
            for v in r.cv.as_array() {
                let _ = write!(out, ",{v:.9}");
            }
            for n in r.roots {
                let _ = write!(out, ",{n}");
            }
            let _ = writeln!(out, ",{:e}", r.objective);
        }
        out
    }
}

struct Search<'a> {
    model: &'a ForwardModel,
    target: &'a EcgRecord,
    spec: &'a SearchSpec,
    width: f64,
    best: ActivationParams,
    best_obj: f64,
    evals: usize,
    trace: Vec<TraceRow>,
}

const ORDER_MARGIN: f64 = 1e-6;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Linear constraints `a · v <= b` describing the sampling box and the ordering.
fn constraints() -> Vec<([f64; 4], f64)> {
    let mut out = Vec::new();
    for (k, (lo, hi)) in CV_RANGES.iter().enumerate() {
        let mut a = [0.0; 4];
        a[k] = 1.0;
        out.push((a, *hi));
        a[k] = -1.0;
        out.push((a, -lo));
    }
    out.push(([-1.0, 1.0, 0.0, 0.0], -ORDER_MARGIN));
    out.push(([0.0, -1.0, 1.0, 0.0], -ORDER_MARGIN));
    out
}

fn axpy(x: [f64; 4], t: f64, d: [f64; 4]) -> [f64; 4] {
    [
        x[0] + t * d[0],
        x[1] + t * d[1],
        x[2] + t * d[2],
        x[3] + t * d[3],
    ]
}

/// Step range `[t_lo, t_hi]` keeping `x + t d` feasible.
fn feasible_steps(x: [f64; 4], d: [f64; 4]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (a, b) in constraints() {
        let ad: f64 = (0..4).map(|k| a[k] * d[k]).sum();
        let slack = b - (0..4).map(|k| a[k] * x[k]).sum::<f64>();
        if ad > 0.0 {
            hi = hi.min(slack / ad);
        } else if ad < 0.0 {
            lo = lo.max(slack / ad);
        }
    }
    (lo.min(0.0), hi.max(0.0))
}

fn unit(d: [f64; 4]) -> [f64; 4] {
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.map(|v| v / n)
}

/// Coordinate axes followed by the pairwise diagonals.
fn search_directions() -> Vec<[f64; 4]> {
    let mut dirs = Vec::new();
    for k in [3, 1, 0, 2] {
        let mut d = [0.0; 4];
        d[k] = 1.0;
        dirs.push(d);
    }
    for i in 0..4 {
        for j in i + 1..4 {
            for sign in [1.0, -1.0] {
                let mut d = [0.0; 4];
                d[i] = 1.0;
                d[j] = sign;
                dirs.push(unit(d));
            }
        }
    }
    dirs
}

impl Search<'_> {
    fn exhausted(&self) -> bool {
        self.evals >= self.spec.max_evals
    }

    fn done(&self) -> bool {
        self.best_obj <= self.spec.tolerance || self.exhausted()
    }

    fn eval(&mut self, params: &ActivationParams) -> Option<f64> {
        if self.exhausted() || !params.cv.is_valid() {
            return None;
        }
        self.evals += 1;
        smoothed_objective(self.model, self.target, params, self.width).ok()
    }

    fn record(&mut self, iteration: usize) {
        self.trace.push(TraceRow {
            width: self.width,
            iteration,
            evaluations: self.evals,
            cv: self.best.cv,
            roots: *self.best.roots.nodes(),
            objective: self.best_obj,
        });
    }

    fn at(&mut self, x: [f64; 4], t: f64, d: [f64; 4]) -> f64 {
        let params = ActivationParams {
            cv: ConductionVelocities::from_array(axpy(x, t, d)),
            roots: self.best.roots.clone(),
        };
        self.eval(&params).unwrap_or(f64::INFINITY)
    }

    /// Line search from the current point along `d`: an even scan over
    /// `[-half, half]` (clipped to the feasible range), repeated scans on a
    /// five-fold narrower window around the best point, then golden-section
    /// on the last bracket. Returns true on strict improvement.
    fn line_search(&mut self, d: [f64; 4], half: f64) -> bool {
        let x = self.best.cv.as_array();
        let (t_lo, t_hi) = feasible_steps(x, d);
        let (mut t_best, mut f_best) = (0.0, self.best_obj);
        let mut center = 0.0;
        let mut half = half;
        let points = self.spec.scan_points.max(3);
        while half >= self.spec.min_step && !self.done() {
            let a = (center - half).max(t_lo);
            let b = (center + half).min(t_hi);
            let step = (b - a) / (points - 1) as f64;
            if step <= 0.0 {
                break;
            }
            for i in 0..points {
                let t = a + i as f64 * step;
                let f = self.at(x, t, d);
                if f < f_best {
                    t_best = t;
                    f_best = f;
                }
            }
            center = t_best;
            half = 2.0 * step;
        }
        let mut a = (center - half).max(t_lo);
        let mut b = (center + half).min(t_hi);
        let mut c = b - GOLDEN * (b - a);
        let mut e = a + GOLDEN * (b - a);
        let mut fc = self.at(x, c, d);
        let mut fe = self.at(x, e, d);
        for _ in 0..self.spec.golden_iters {
            for (t, f) in [(c, fc), (e, fe)] {
                if f < f_best {
                    t_best = t;
                    f_best = f;
                }
            }
            if f_best <= self.spec.tolerance || self.exhausted() {
                break;
            }
            if fc <= fe {
                b = e;
                e = c;
                fe = fc;
                c = b - GOLDEN * (b - a);
                fc = self.at(x, c, d);
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + GOLDEN * (b - a);
                fe = self.at(x, e, d);
            }
        }
        for (t, f) in [(c, fc), (e, fe)] {
            if f < f_best {
                t_best = t;
                f_best = f;
            }
        }
        if f_best < self.best_obj {
            self.best.cv = ConductionVelocities::from_array(axpy(x, t_best, d));
            self.best_obj = f_best;
            true
        } else {
            false
        }
    }

    fn swap_roots(&mut self) -> bool {
        let mut improved = false;
        for k in 0..N_ROOTS {
            let label = RootNodeSet::expected_label(k);
            for node in self.model.mesh().nodes_with_label(label) {
                if self.exhausted() || self.best_obj <= self.spec.tolerance {
                    return improved;
                }
                if self.best.roots.nodes().contains(&node) {
                    continue;
                }
                let params = ActivationParams {
                    cv: self.best.cv,
                    roots: self.best.roots.with_node(k, node),
                };
                if let Some(f) = self.eval(&params) {
                    if f < self.best_obj {
                        self.best = params;
                        self.best_obj = f;
                        improved = true;
                    }
                }
            }
        }
        improved
    }
}

/// Cyclic line searches on the masked ECG MAE, starting from the range
/// midpoints and the given roots. Each stage minimizes the objective with a
/// smoothed upstroke, the last one with the true step upstroke. Within a
/// stage only strict improvements are accepted, so its traced objective
/// never increases.
pub fn coordinate_descent(
    model: &ForwardModel,
    target: &EcgRecord,
    roots: &RootNodeSet,
    spec: &SearchSpec,
) -> Result<SearchResult, InverseError> {
    spec.check()?;
    let start = ActivationParams {
        cv: midpoint_cv(),
        roots: roots.clone(),
    };
    let mut s = Search {
        model,
        target,
        spec,
        width: 0.0,
        best: start,
        best_obj: f64::INFINITY,
        evals: 0,
        trace: Vec::new(),
    };
    let directions = search_directions();
    let widths: Vec<f64> = spec.ramp_widths.iter().copied().chain([0.0]).collect();
    let mut stalled = false;
    let mut first = true;
    for &width in &widths {
        s.width = width;
        let here = s.best.clone();
        s.best_obj = s
            .eval(&here)
            .ok_or_else(|| InverseError::Start("forward model failed".into()))?;
        s.record(0);
        stalled = false;
        for cycle in 1..=spec.max_cycles {
            if s.done() {
                break;
            }
            let origin = s.best.cv.as_array();
            let mut improved = false;
            for (i, d) in directions.iter().enumerate() {
                // the very first sweep scans the whole range along each axis
                let half = if first && i < 4 {
                    spec.coarse_half_width
                } else {
                    spec.local_half_width
                };
                if s.line_search(*d, half) {
                    improved = true;
                    s.record(cycle);
                }
                if s.done() {
                    break;
                }
            }
            first = false;
            // pattern move along the net displacement of this cycle
            let moved = s.best.cv.as_array();
            let shift: [f64; 4] = std::array::from_fn(|k| moved[k] - origin[k]);
            if !s.done()
                && shift.iter().any(|v| *v != 0.0)
                && s.line_search(unit(shift), spec.local_half_width)
            {
                improved = true;
                s.record(cycle);
            }
            if spec.rn_pool == RnPool::Endocardium && !s.done() && s.swap_roots() {
                improved = true;
                s.record(cycle);
            }
            if !improved {
                stalled = true;
                break;
            }
        }
        if s.exhausted() {
            break;
        }
    }
    let status = if s.width == 0.0 && s.best_obj <= spec.tolerance {
        SearchStatus::Converged
    } else if stalled && !s.exhausted() {
        SearchStatus::Stalled
    } else {
        SearchStatus::BudgetExhausted
    };
    let objective = if s.width == 0.0 {
        s.best_obj
    } else {
        objective(model, target, &s.best).map_err(InverseError::Start)?
    };
    Ok(SearchResult {
        params: s.best,
        objective,
        evaluations: s.evals,
        status,
        trace: s.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_exact_on_integer_steps() {
        let g = grid(120.0, 179.0, 1.0);
        assert_eq!(g.len(), 60);
        assert_eq!(g[30], 150.0);
        assert_eq!(*g.last().unwrap(), 179.0);
        assert!(grid(1.0, 0.0, 1.0).is_empty());
        assert!(grid(0.0, 1.0, 0.0).is_empty());
    }

    #[test]
    fn spec_validation() {
        assert!(SearchSpec::default().check().is_ok());
        let bad = SearchSpec {
            min_step: 0.0,
            ..SearchSpec::default()
        };
        assert!(bad.check().is_err());
    }
}
