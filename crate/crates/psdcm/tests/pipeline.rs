mod common;

use cardiotwin_core::cohort::Split;
use cardiotwin_core::losses::{midpoint_baseline, LossWeights};
use cardiotwin_psdcm::checkpoint::Checkpoint;
use cardiotwin_psdcm::eval::{baseline_row, evaluate, ols, EvalError};
use cardiotwin_psdcm::loss::Ablation;
use cardiotwin_psdcm::model::PsDcmModel;
use cardiotwin_psdcm::train::{infer, train, Prediction, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, small_config};

fn short_run(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        patience: None,
        model: small_config(),
        ..TrainConfig::default()
    }
}

#[test]
fn two_subjects_train_below_epoch_zero() {
    let cfg = short_run(50);
    let fx = fixture(2, 1, &cfg.model);
    assert_eq!(fx.cohort.split_sizes(), (1, 1, 0));
    let out = train(&fx.dataset, &cfg).unwrap();
    assert_eq!(out.curves.len(), 51);
    let first = out.curves[0].train_total;
    let last = out.curves.last().unwrap().train_total;
    assert!(last < first, "{last} vs {first}");
}

#[test]
fn same_seed_same_curves() {
    let cfg = short_run(4);
    let fx = fixture(2, 2, &cfg.model);
    let a = train(&fx.dataset, &cfg).unwrap();
    let b = train(&fx.dataset, &cfg).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.best, b.best);
}

#[test]
fn ablations_train_and_pc_term_leaves_total() {
    let base = short_run(3);
    let fx = fixture(2, 2, &base.model);
    let w = LossWeights::default();
    for ablation in [
        Ablation::default(),
        Ablation {
            without_conditions: true,
            ..Ablation::default()
        },
        Ablation {
            without_pc_decoder: true,
            ..Ablation::default()
        },
    ] {
        let cfg = TrainConfig {
            ablation,
            ..base.clone()
        };
        let out = train(&fx.dataset, &cfg).unwrap();
        for e in &out.curves {
            assert!(e.train_total.is_finite() && e.val_total.is_finite());
            for (parts, total) in [(&e.train, e.train_total), (&e.val, e.val_total)] {
                let pc = if ablation.without_pc_decoder {
                    0.0
                } else {
                    w.pc * parts.pc
                };
                let expected =
                    pc + w.ecg * parts.ecg + w.kl * parts.kl + w.inf * (parts.rn + w.cv * parts.cv);
                assert!((total - expected).abs() <= 1e-12 * expected.max(1.0));
                // the reconstruction error is still logged
                assert!(parts.pc > 0.0);
            }
        }
    }
}

#[test]
fn oracle_predictions_score_zero() {
    let cfg = small_config();
    let fx = fixture(3, 2, &cfg);
    let test = fx.dataset.split(Split::Test);
    let preds: Vec<Prediction> = test
        .iter()
        .map(|s| {
            let mesh = fx.dataset.mesh(s.mesh_id);
            Prediction {
                subject_id: s.subject_id,
                cv: s.cv,
                rn: s.rn,
                coarse: mesh.gt_coarse.concat(),
                dense: mesh.gt_dense.concat(),
                ecg: s.ecg.clone(),
            }
        })
        .collect();
    let report = evaluate("oracle", &preds, &test, &fx.dataset).unwrap();
    for m in &report.subjects {
        assert_eq!(
            (m.rn_lv, m.rn_rv, m.pc_coarse, m.pc_dense, m.ecg),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(m.cv, [0.0; 4]);
    }
}

#[test]
fn stored_predictions_reproduce_live_report() {
    let cfg = small_config();
    let fx = fixture(3, 2, &cfg);
    let model = PsDcmModel::new(cfg).unwrap();
    let test = fx.dataset.split(Split::Test);
    let live: Vec<Prediction> = test
        .iter()
        .map(|s| infer(&model, s, Ablation::default()).unwrap())
        .collect();
    let text: Vec<String> = live
        .iter()
        .map(|p| serde_json::to_string(p).unwrap())
        .collect();
    let stored: Vec<Prediction> = text
        .iter()
        .map(|t| serde_json::from_str(t).unwrap())
        .collect();
    let a = evaluate("m", &live, &test, &fx.dataset).unwrap();
    let b = evaluate("m", &stored, &test, &fx.dataset).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_evaluates_identically() {
    let cfg = short_run(2);
    let fx = fixture(3, 2, &cfg.model);
    let out = train(&fx.dataset, &cfg).unwrap();
    let ckpt = Checkpoint {
        config_hash: "abc123".into(),
        preprocessing_hash: fx.dataset.preprocessing.clone(),
        config: serde_json::json!({ "epochs": 2 }),
        model: out.best.clone(),
        state: out.state.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    loaded
        .check_preprocessing(&fx.dataset.preprocessing)
        .unwrap();
    assert!(loaded.check_preprocessing("other").is_err());

    let test = fx.dataset.split(Split::Test);
    let before: Vec<Prediction> = test
        .iter()
        .map(|s| infer(&out.best, s, Ablation::default()).unwrap())
        .collect();
    let after: Vec<Prediction> = test
        .iter()
        .map(|s| infer(&loaded.model, s, Ablation::default()).unwrap())
        .collect();
    assert_eq!(before, after);
    assert_eq!(
        evaluate("m", &before, &test, &fx.dataset).unwrap(),
        evaluate("m", &after, &test, &fx.dataset).unwrap()
    );
}

#[test]
fn untrained_model_sits_near_midpoint_baseline() {
    let cfg = small_config();
    let fx = fixture(10, 10, &cfg);
    let test = fx.dataset.split(Split::Test);
    let model = PsDcmModel::new(cfg).unwrap();
    let preds: Vec<Prediction> = test
        .iter()
        .map(|s| infer(&model, s, Ablation::default()).unwrap())
        .collect();
    let report = evaluate("untrained", &preds, &test, &fx.dataset).unwrap();
    let analytic = midpoint_baseline().iter().sum::<f64>() / 4.0;
    let got = report.summary.cv_mean.mean;
    assert!(
        (got - analytic).abs() <= 0.2 * analytic,
        "{got} vs {analytic}"
    );
    let refs = fx.mesh_refs();
    let row = baseline_row(&test, &refs).unwrap();
    assert!(row.rn_lv.mean > 0.0 && row.rn_rv.mean > 0.0);
}

#[test]
fn regression_fits() {
    let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
    let fit = ols(&x, &y).unwrap();
    assert!((fit.r2 - 1.0).abs() < 1e-12 && (fit.slope - 3.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let y: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    assert!(ols(&x, &y).unwrap().r2 < 0.02);

    assert!(matches!(
        ols(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]),
        Err(EvalError::ConstantX)
    ));
    assert!(matches!(
        ols(&[1.0, 2.0], &[1.0, 2.0]),
        Err(EvalError::TooFewPoints(_))
    ));
}
