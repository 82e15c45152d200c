//! The training objective built on the tape.

use serde::{Deserialize, Serialize};

use cardiotwin_core::losses::{emd_assignment, EmdMode, LossError, LossParts, LossWeights};
use cardiotwin_core::vec3::Vec3;

use crate::data::{MeshData, Sample};
use crate::model::Outputs;
use crate::tape::{Mat, Tape, Var};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Feed zeros in place of the subject conditions.
    pub without_conditions: bool,
    /// Drop the point-cloud reconstruction term from the objective.
    pub without_pc_decoder: bool,
}

fn rows_of(m: &Mat) -> Vec<Vec3> {
    (0..m.rows)
        .map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)])
        .collect()
}

/// Mean matched distance from `pred` rows to `gt` on the tape. The matching
/// is solved on current values and held fixed for differentiation.
pub fn emd_on_tape(
    tape: &mut Tape,
    pred: Var,
    gt: &[Vec3],
    mode: EmdMode,
) -> Result<Var, LossError> {
    let points = rows_of(tape.value(pred));
    let assign = emd_assignment(&points, gt, mode)?;
    let matched: Vec<f64> = assign.iter().flat_map(|&j| gt[j]).collect();
    let target = tape.leaf(Mat::from_vec(gt.len(), 3, matched));
    let diff = tape.sub(pred, target);
    let dist = tape.row_norm(diff);
    Ok(tape.mean(dist))
}

/// Weighted total on the tape plus the unweighted parts.
pub fn subject_loss(
    tape: &mut Tape,
    out: &Outputs,
    sample: &Sample,
    mesh: &MeshData,
    weights: &LossWeights,
    ablation: Ablation,
    mode: EmdMode,
) -> Result<(Var, LossParts), LossError> {
    let n_coarse = tape.value(out.coarse).rows / 2;
    let n_dense = tape.value(out.dense).rows / 2;
    let mut pc_terms = Vec::new();
    for c in 0..2 {
        let coarse = tape.slice_rows(out.coarse, c * n_coarse, n_coarse);
        let dense = tape.slice_rows(out.dense, c * n_dense, n_dense);
        let lc = emd_on_tape(tape, coarse, &mesh.gt_coarse[c], mode)?;
        let ld = emd_on_tape(tape, dense, &mesh.gt_dense[c], mode)?;
        let ld = tape.scale(ld, weights.alpha);
        pc_terms.push(tape.add(lc, ld));
    }
    let pc = tape.add(pc_terms[0], pc_terms[1]);

    let target = tape.leaf(sample.input.ecg.clone());
    let diff = tape.sub(out.ecg, target);
    let abs = tape.abs(diff);
    let ecg = tape.mean(abs);

    let sq = tape.square(out.mu);
    let var = tape.exp(out.logvar);
    let s = tape.add(sq, var);
    let s = tape.sub(s, out.logvar);
    let s = tape.add_scalar(s, -1.0);
    let s = tape.sum(s);
    let kl = tape.scale(s, 0.5);

    let rn_target = tape.leaf(Mat::from_vec(
        sample.rn.len(),
        3,
        sample.rn.iter().flatten().copied().collect(),
    ));
    let diff = tape.sub(out.rn, rn_target);
    let abs = tape.abs(diff);
    let rn = tape.mean(abs);

    let cv_target = tape.leaf(Mat::from_vec(1, 4, sample.cv.to_vec()));
    let inv = tape.leaf(Mat::from_vec(1, 4, sample.cv.map(|v| 100.0 / v).to_vec()));
    let diff = tape.sub(out.cv, cv_target);
    let abs = tape.abs(diff);
    let rel = tape.mul(abs, inv);
    let cv = tape.mean(rel);

    let parts = LossParts {
        pc: tape.value(pc).data[0],
        ecg: tape.value(ecg).data[0],
        kl: tape.value(kl).data[0],
        rn: tape.value(rn).data[0],
        cv: tape.value(cv).data[0],
    };

    let mut terms = Vec::new();
    if !ablation.without_pc_decoder {
        terms.push(tape.scale(pc, weights.pc));
    }
    terms.push(tape.scale(ecg, weights.ecg));
    terms.push(tape.scale(kl, weights.kl));
    let cv_w = tape.scale(cv, weights.cv);
    let inf = tape.add(rn, cv_w);
    terms.push(tape.scale(inf, weights.inf));
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t);
    }
    Ok((total, parts))
}

/// Weighted total matching the tape objective, from unweighted parts.
pub fn total_from_parts(parts: &LossParts, weights: &LossWeights, ablation: Ablation) -> f64 {
    let pc = if ablation.without_pc_decoder {
        0.0
    } else {
        weights.pc * parts.pc
    };
    pc + weights.ecg * parts.ecg
        + weights.kl * parts.kl
        + weights.inf * (parts.rn + weights.cv * parts.cv)
}
