//! Training loop, inference and loss evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cardiotwin_core::cohort::Split;
use cardiotwin_core::eikonal::N_ROOTS;
use cardiotwin_core::losses::{EmdMode, LossError, LossParts, LossWeights};
use cardiotwin_core::pseudo_ecg::EcgRecord;
use cardiotwin_core::vec3::Vec3;

use crate::data::{ecg_record, Dataset, Sample};
use crate::loss::{subject_loss, total_from_parts, Ablation};
use crate::model::{sample_noise, Input, Mode, ModelConfig, ModelError, PsDcmModel};
use crate::optim::{adam_step, AdamConfig, AdamState, OptimError};
use crate::tape::{Tape, TapeError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: OptimError,
    },
    #[error("epoch {epoch}, step {step}: non-finite loss")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("{0:?} split is empty")]
    EmptySplit(Split),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Subjects per optimizer step. Batches never mix meshes.
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Stop after this many epochs without a better validation loss.
    pub patience: Option<usize>,
    pub ablation: Ablation,
    pub emd: EmdMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 10,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            patience: Some(20),
            ablation: Ablation::default(),
            emd: EmdMode::DEFAULT_APPROX,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        self.weights.check()?;
        self.model.check()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss decomposition for one epoch. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossParts,
    pub train_total: f64,
    pub val: LossParts,
    pub val_total: f64,
}

pub fn losses_csv(curves: &[EpochLog]) -> String {
    let mut out = String::from(
        "epoch,train_total,train_pc,train_ecg,train_kl,train_rn,train_cv,val_total,val_pc,val_ecg,val_kl,val_rn,val_cv\n",
    );
    for e in curves {
        let p = |l: &LossParts| {
            format!(
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                l.pc, l.ecg, l.kl, l.rn, l.cv
            )
        };
        out.push_str(&format!(
            "{},{:.9e},{},{:.9e},{}\n",
            e.epoch,
            e.train_total,
            p(&e.train),
            e.val_total,
            p(&e.val)
        ));
    }
    out
}

pub struct TrainOutput {
    /// Parameters with the lowest validation loss.
    pub best: PsDcmModel,
    pub best_epoch: usize,
    /// Optimizer state at the best epoch.
    pub state: AdamState,
    pub curves: Vec<EpochLog>,
}

fn effective_input(sample: &Sample, ablation: Ablation) -> Input {
    let mut input = sample.input.clone();
    if ablation.without_conditions {
        input.conditions = [0.0; 3];
    }
    input
}

/// Loss and parameter gradients for one subject.
pub fn subject_gradient(
    model: &PsDcmModel,
    dataset: &Dataset,
    sample: &Sample,
    cfg: &TrainConfig,
    noise: Option<&[f64]>,
) -> Result<(Vec<Vec<f64>>, LossParts, f64), TrainError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mode = noise.map_or(Mode::Infer, Mode::Train);
    let input = effective_input(sample, cfg.ablation);
    let out = model.forward(&mut tape, &bound, &input, mode)?;
    let mesh = dataset.mesh(sample.mesh_id);
    let (total, parts) = subject_loss(
        &mut tape,
        &out,
        sample,
        mesh,
        &cfg.weights,
        cfg.ablation,
        cfg.emd,
    )?;
    let value = tape.value(total).data[0];
    let grads = tape.backward(total)?;
    let g = bound
        .vars
        .iter()
        .zip(&model.params)
        .map(|(v, p)| grads.get_or_zero(*v, (p.rows, p.cols)).data)
        .collect();
    Ok((g, parts, value))
}

/// Loss of one subject, training mode if `noise` is given.
pub fn subject_loss_value(
    model: &PsDcmModel,
    dataset: &Dataset,
    sample: &Sample,
    cfg: &TrainConfig,
    noise: Option<&[f64]>,
) -> Result<(LossParts, f64), TrainError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mode = noise.map_or(Mode::Infer, Mode::Train);
    let input = effective_input(sample, cfg.ablation);
    let out = model.forward(&mut tape, &bound, &input, mode)?;
    let mesh = dataset.mesh(sample.mesh_id);
    let (total, parts) = subject_loss(
        &mut tape,
        &out,
        sample,
        mesh,
        &cfg.weights,
        cfg.ablation,
        cfg.emd,
    )?;
    Ok((parts, tape.value(total).data[0]))
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let n = parts.len().max(1) as f64;
    let mut m = LossParts::default();
    for p in parts {
        m.pc += p.pc / n;
        m.ecg += p.ecg / n;
        m.kl += p.kl / n;
        m.rn += p.rn / n;
        m.cv += p.cv / n;
    }
    m
}

/// Mean inference-mode loss over `samples`.
pub fn evaluate_loss(
    model: &PsDcmModel,
    dataset: &Dataset,
    samples: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(LossParts, f64), TrainError> {
    let parts = samples
        .iter()
        .map(|s| subject_loss_value(model, dataset, s, cfg, None).map(|(p, _)| p))
        .collect::<Result<Vec<_>, _>>()?;
    let m = mean_parts(&parts);
    Ok((m, total_from_parts(&m, &cfg.weights, cfg.ablation)))
}

/// Consecutive chunks of each mesh's training subjects.
fn batches(train: &[&Sample], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut current_mesh = None;
    for (i, s) in train.iter().enumerate() {
        let fresh =
            current_mesh != Some(s.mesh_id) || out.last().is_none_or(|b| b.len() >= batch_size);
        if fresh {
            out.push(Vec::new());
            current_mesh = Some(s.mesh_id);
        }
        out.last_mut().expect("batch exists").push(i);
    }
    out
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    cfg.check()?;
    let mut train_set = dataset.split(Split::Train);
    let val_set = dataset.split(Split::Val);
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    train_set.sort_by_key(|s| (s.mesh_id, s.subject_id));
    let mut model = PsDcmModel::new(cfg.model.clone())?;
    let mut state = AdamState::new(model.params.iter().map(|p| p.values.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (train0, train0_total) = evaluate_loss(&model, dataset, &train_set, cfg)?;
    let (val0, val0_total) = evaluate_loss(&model, dataset, &val_set, cfg)?;
    let mut curves = vec![EpochLog {
        epoch: 0,
        train: train0,
        train_total: train0_total,
        val: val0,
        val_total: val0_total,
    }];
    let mut best = (val0_total, 0usize, model.clone(), state.clone());
    let mut order = batches(&train_set, cfg.batch_size);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_parts = Vec::with_capacity(train_set.len());
        for batch in &order {
            let mut acc: Vec<Vec<f64>> = model
                .params
                .iter()
                .map(|p| vec![0.0; p.values.len()])
                .collect();
            for &i in batch {
                let noise = sample_noise(&mut rng, cfg.model.latent);
                let (g, parts, value) =
                    subject_gradient(&model, dataset, train_set[i], cfg, Some(&noise))?;
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, step });
                }
                let scale = 1.0 / batch.len() as f64;
                for (a, gk) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(gk) {
                        *x += scale * y;
                    }
                }
                epoch_parts.push(parts);
            }
            let mut values: Vec<Vec<f64>> = model.params.iter().map(|p| p.values.clone()).collect();
            adam_step(&mut values, &acc, &mut state, &cfg.adam).map_err(|source| {
                TrainError::Diverged {
                    epoch,
                    step,
                    source,
                }
            })?;
            for (p, v) in model.params.iter_mut().zip(values) {
                p.values = v;
            }
            step += 1;
        }
        let train_parts = mean_parts(&epoch_parts);
        let (val, val_total) = evaluate_loss(&model, dataset, &val_set, cfg)?;
        let log = EpochLog {
            epoch,
            train: train_parts,
            train_total: total_from_parts(&train_parts, &cfg.weights, cfg.ablation),
            val,
            val_total,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5}",
            log.train_total,
            log.val_total
        );
        curves.push(log);
        if val_total < best.0 {
            best = (val_total, epoch, model.clone(), state.clone());
        }
        if cfg.patience.is_some_and(|p| epoch - best.1 >= p) {
            break;
        }
    }
    Ok(TrainOutput {
        best: best.2,
        best_epoch: best.1,
        state: best.3,
        curves,
    })
}

/// Network outputs for one subject in inference mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: usize,
    pub cv: [f64; 4],
    pub rn: [Vec3; N_ROOTS],
    pub coarse: Vec<Vec3>,
    pub dense: Vec<Vec3>,
    pub ecg: EcgRecord,
}

pub fn infer(
    model: &PsDcmModel,
    sample: &Sample,
    ablation: Ablation,
) -> Result<Prediction, TrainError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = model.forward(
        &mut tape,
        &bound,
        &effective_input(sample, ablation),
        Mode::Infer,
    )?;
    let rows = |v| {
        let m = tape.value(v);
        (0..m.rows)
            .map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)])
            .collect::<Vec<Vec3>>()
    };
    let rn: Vec<Vec3> = rows(out.rn);
    let cv = tape.value(out.cv);
    Ok(Prediction {
        subject_id: sample.subject_id,
        cv: [cv.data[0], cv.data[1], cv.data[2], cv.data[3]],
        rn: rn.try_into().expect("seven root rows"),
        coarse: rows(out.coarse),
        dense: rows(out.dense),
        ecg: ecg_record(tape.value(out.ecg), &sample.ecg),
    })
}
