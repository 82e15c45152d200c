//! Per-subject metrics, summary tables, baselines and the
//! reconstruction-versus-inference correlation study.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cardiotwin_core::eikonal::{N_LV_ROOTS, N_ROOTS};
use cardiotwin_core::geometry::TetMesh;
use cardiotwin_core::losses::{
    ecg_mae, emd, midpoint_cv, random_endo_rn_baseline, rn_error, EmdMode, LossError, MeanStd,
    TableRow,
};
use cardiotwin_core::vec3::Vec3;

use crate::data::{Dataset, Sample};
use crate::train::Prediction;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("no prediction for subject {0}")]
    MissingPrediction(usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("regression needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("regression is degenerate: x is constant")]
    ConstantX,
    #[error("length mismatch: {0} x values, {1} y values")]
    Length(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: usize,
    pub mesh_id: usize,
    pub rn_lv: f64,
    pub rn_rv: f64,
    /// Relative error per velocity, %.
    pub cv: [f64; 4],
    /// Exact EMD averaged over the two ventricles, cm.
    pub pc_coarse: f64,
    pub pc_dense: f64,
    /// Masked ECG MAE.
    pub ecg: f64,
}

impl SubjectMetrics {
    pub fn rn_mean(&self) -> f64 {
        (self.rn_lv * N_LV_ROOTS as f64 + self.rn_rv * (N_ROOTS - N_LV_ROOTS) as f64)
            / N_ROOTS as f64
    }

    pub fn cv_mean(&self) -> f64 {
        self.cv.iter().sum::<f64>() / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rn_lv: MeanStd,
    pub rn_rv: MeanStd,
    pub cv: [MeanStd; 4],
    pub cv_mean: MeanStd,
    pub pc_coarse: MeanStd,
    pub pc_dense: MeanStd,
    pub ecg: MeanStd,
}

impl Summary {
    pub fn of(subjects: &[SubjectMetrics]) -> Summary {
        let col = |f: &dyn Fn(&SubjectMetrics) -> f64| {
            MeanStd::of(&subjects.iter().map(f).collect::<Vec<_>>())
        };
        Summary {
            rn_lv: col(&|s| s.rn_lv),
            rn_rv: col(&|s| s.rn_rv),
            cv: std::array::from_fn(|k| col(&|s| s.cv[k])),
            cv_mean: col(&|s| s.cv_mean()),
            pc_coarse: col(&|s| s.pc_coarse),
            pc_dense: col(&|s| s.pc_dense),
            ecg: col(&|s| s.ecg),
        }
    }

    pub fn table_row(&self, method: &str) -> TableRow {
        TableRow {
            method: method.to_string(),
            rn_lv: self.rn_lv,
            rn_rv: self.rn_rv,
            cv: self.cv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub subjects: Vec<SubjectMetrics>,
    pub summary: Summary,
}

fn split_halves(points: &[Vec3]) -> [&[Vec3]; 2] {
    let (a, b) = points.split_at(points.len() / 2);
    [a, b]
}

pub fn subject_metrics(
    pred: &Prediction,
    sample: &Sample,
    dataset: &Dataset,
) -> Result<SubjectMetrics, EvalError> {
    let mesh = dataset.mesh(sample.mesh_id);
    let (rn_lv, rn_rv) = rn_error(&pred.rn, &sample.rn);
    let cv = std::array::from_fn(|k| 100.0 * (pred.cv[k] - sample.cv[k]).abs() / sample.cv[k]);
    let mut pc_coarse = 0.0;
    let mut pc_dense = 0.0;
    for (c, (coarse, dense)) in split_halves(&pred.coarse)
        .into_iter()
        .zip(split_halves(&pred.dense))
        .enumerate()
    {
        pc_coarse += emd(coarse, &mesh.gt_coarse[c], EmdMode::Exact)? / 2.0;
        pc_dense += emd(dense, &mesh.gt_dense[c], EmdMode::Exact)? / 2.0;
    }
    Ok(SubjectMetrics {
        subject_id: sample.subject_id,
        mesh_id: sample.mesh_id,
        rn_lv,
        rn_rv,
        cv,
        pc_coarse,
        pc_dense,
        ecg: ecg_mae(&pred.ecg, &sample.ecg, true)?,
    })
}

/// Scores stored or live predictions against `samples`, in sample order.
pub fn evaluate(
    method: &str,
    predictions: &[Prediction],
    samples: &[&Sample],
    dataset: &Dataset,
) -> Result<Report, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let subjects = samples
        .iter()
        .map(|s| {
            let p = predictions
                .iter()
                .find(|p| p.subject_id == s.subject_id)
                .ok_or(EvalError::MissingPrediction(s.subject_id))?;
            subject_metrics(p, s, dataset)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report {
        method: method.to_string(),
        summary: Summary::of(&subjects),
        subjects,
    })
}

/// Row for guessing every velocity at its range midpoint and every root at a
/// random endocardial node of the right ventricle (expected error per subject).
pub fn baseline_row(
    samples: &[&Sample],
    meshes: &[(usize, &TetMesh)],
) -> Result<TableRow, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mid = midpoint_cv().as_array();
    let mut lv = Vec::new();
    let mut rv = Vec::new();
    let mut cv: [Vec<f64>; 4] = Default::default();
    for s in samples {
        let mesh = meshes
            .iter()
            .find(|(id, _)| *id == s.mesh_id)
            .map(|(_, m)| *m)
            .ok_or(EvalError::MissingPrediction(s.subject_id))?;
        let (a, b) = random_endo_rn_baseline(mesh, &s.rn);
        lv.push(a);
        rv.push(b);
        for k in 0..4 {
            cv[k].push(100.0 * (mid[k] - s.cv[k]).abs() / s.cv[k]);
        }
    }
    Ok(TableRow {
        method: "midpoint / random endocardial node".into(),
        rn_lv: MeanStd::of(&lv),
        rn_rv: MeanStd::of(&rv),
        cv: cv.map(|v| MeanStd::of(&v)),
    })
}

/// Published PS-DCM results on 100 real anatomies, for orientation only.
pub const REFERENCE_LINES: [&str; 2] = [
    "# reference (100 real anatomies, n = 2048): RN LV 2.63 +/- 0.909 cm",
    "# reference (100 real anatomies, n = 2048): CV sheet 9.53 +/- 3.13 %",
];

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<Fit, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::Length(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(EvalError::TooFewPoints(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 || x.iter().all(|v| *v == x[0]) {
        return Err(EvalError::ConstantX);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    // a constant y is fitted exactly by the flat line
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(Fit {
        slope,
        intercept,
        r2,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pair {
    PcRn,
    PcCv,
    EcgRn,
    EcgCv,
}

impl Pair {
    pub const ALL: [Pair; 4] = [Pair::PcRn, Pair::PcCv, Pair::EcgRn, Pair::EcgCv];

    pub fn name(self) -> &'static str {
        match self {
            Pair::PcRn => "pc_rn",
            Pair::PcCv => "pc_cv",
            Pair::EcgRn => "ecg_rn",
            Pair::EcgCv => "ecg_cv",
        }
    }

    pub fn axis_labels(self) -> (&'static str, &'static str) {
        match self {
            Pair::PcRn => ("PC reconstruction EMD (cm)", "RN error (cm)"),
            Pair::PcCv => ("PC reconstruction EMD (cm)", "CV error (%)"),
            Pair::EcgRn => ("ECG reconstruction MAE", "RN error (cm)"),
            Pair::EcgCv => ("ECG reconstruction MAE", "CV error (%)"),
        }
    }

    /// Reconstruction error on `x`, inference error on `y`.
    pub fn values(self, subjects: &[SubjectMetrics]) -> (Vec<f64>, Vec<f64>) {
        subjects
            .iter()
            .map(|s| {
                let x = match self {
                    Pair::PcRn | Pair::PcCv => s.pc_dense,
                    Pair::EcgRn | Pair::EcgCv => s.ecg,
                };
                let y = match self {
                    Pair::PcRn | Pair::EcgRn => s.rn_mean(),
                    Pair::PcCv | Pair::EcgCv => s.cv_mean(),
                };
                (x, y)
            })
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pair: Pair,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fit: Fit,
}

impl Correlation {
    pub fn scatter_csv(&self) -> String {
        let (xl, yl) = self.pair.axis_labels();
        let mut out = format!(
            "# slope={} intercept={} r2={} n={}\n{xl},{yl}\n",
            self.fit.slope, self.fit.intercept, self.fit.r2, self.fit.n
        );
        for (x, y) in self.x.iter().zip(&self.y) {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

pub fn correlation_study(subjects: &[SubjectMetrics]) -> Result<Vec<Correlation>, EvalError> {
    Pair::ALL
        .iter()
        .map(|&pair| {
            let (x, y) = pair.values(subjects);
            let fit = ols(&x, &y)?;
            Ok(Correlation { pair, x, y, fit })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_a_line() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.intercept + 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_contract() {
        assert!(matches!(
            ols(&[1.0, 2.0], &[1.0, 2.0]),
            Err(EvalError::TooFewPoints(2))
        ));
        assert!(matches!(
            ols(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]),
            Err(EvalError::ConstantX)
        ));
    }
}
