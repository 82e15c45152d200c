mod common;

use cardiotwin_core::cohort::CV_RANGES;
use cardiotwin_core::losses::EmdMode;
use cardiotwin_psdcm::model::{sample_noise, Input, Mode, ModelConfig, PsDcmModel, COORD_SCALE};
use cardiotwin_psdcm::optim::{adam_step, AdamConfig, AdamState};
use cardiotwin_psdcm::tape::{Mat, Tape, TapeError};
use cardiotwin_psdcm::train::{infer, subject_gradient, subject_loss_value, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::fixture;

#[test]
fn full_loss_gradient_matches_central_differences() {
    let cfg = TrainConfig {
        emd: EmdMode::Exact,
        ..TrainConfig::default()
    };
    let fx = fixture(1, 1, &cfg.model);
    let sample = &fx.dataset.samples[0];
    let mut model = PsDcmModel::new(cfg.model.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let noise = sample_noise(&mut rng, cfg.model.latent);
    let (grads, _, _) = subject_gradient(&model, &fx.dataset, sample, &cfg, Some(&noise)).unwrap();

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        // every layer gets picked, not just the widest ones
        let p = k % model.params.len();
        let i = rng.random_range(0..model.params[p].values.len());
        let orig = model.params[p].values[i];
        model.params[p].values[i] = orig + h;
        let up = subject_loss_value(&model, &fx.dataset, sample, &cfg, Some(&noise))
            .unwrap()
            .1;
        model.params[p].values[i] = orig - h;
        let down = subject_loss_value(&model, &fx.dataset, sample, &cfg, Some(&noise))
            .unwrap()
            .1;
        model.params[p].values[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let g = grads[p][i];
        let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-8);
        assert!(
            rel < 1e-4,
            "{}[{i}]: analytic {g:e}, numeric {fd:e}",
            model.params[p].name
        );
        worst = worst.max(rel);
    }
    eprintln!("worst relative error {worst:e}");
}

fn permuted(input: &Input, perm: &[usize]) -> Input {
    let rows = |m: &Mat| {
        let mut out = Mat::zeros(m.rows, m.cols);
        for (dst, &src) in perm.iter().enumerate() {
            out.data[dst * m.cols..(dst + 1) * m.cols].copy_from_slice(m.row(src));
        }
        out
    };
    Input {
        pc: rows(&input.pc),
        ecg: rows(&input.ecg),
        time: rows(&input.time),
        conditions: input.conditions,
    }
}

#[test]
fn encoder_ignores_point_order() {
    let cfg = ModelConfig::default();
    let fx = fixture(1, 1, &cfg);
    let model = PsDcmModel::new(cfg.clone()).unwrap();
    let input = &fx.dataset.samples[0].input;
    let mut perm: Vec<usize> = (0..cfg.n_points).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let encode = |inp: &Input| {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward(&mut tape, &bound, inp, Mode::Infer).unwrap();
        (tape.value(out.mu).clone(), tape.value(out.logvar).clone())
    };
    let (mu_a, lv_a) = encode(input);
    let (mu_b, lv_b) = encode(&permuted(input, &perm));
    for (a, b) in mu_a
        .data
        .iter()
        .chain(&lv_a.data)
        .zip(mu_b.data.iter().chain(&lv_b.data))
    {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn inference_is_deterministic() {
    let cfg = ModelConfig::default();
    let fx = fixture(1, 2, &cfg);
    let model = PsDcmModel::new(cfg).unwrap();
    for s in &fx.dataset.samples {
        let a = infer(&model, s, Default::default()).unwrap();
        let b = infer(&model, s, Default::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn zero_weights_leave_output_biases() {
    let cfg = ModelConfig::default();
    let fx = fixture(1, 1, &cfg);
    let mut model = PsDcmModel::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in &mut model.params {
        let bias = p.name.ends_with(".b");
        for v in &mut p.values {
            *v = if bias {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            };
        }
    }
    let bias = |name: &str| {
        model
            .params
            .iter()
            .find(|p| p.name == name)
            .unwrap()
            .values
            .clone()
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = model
        .forward(&mut tape, &bound, &fx.dataset.samples[0].input, Mode::Infer)
        .unwrap();

    assert_eq!(tape.value(out.ecg).data, bias("ecg2.b"));
    let coarse: Vec<f64> = bias("coarse.b").iter().map(|b| b * COORD_SCALE).collect();
    assert_eq!(tape.value(out.coarse).data, coarse);
    let offsets = bias("offsets.b");
    let r = cfg.expansion();
    let dense = &tape.value(out.dense).data;
    for (row, off) in offsets.chunks(3).enumerate() {
        for c in 0..3 {
            assert_eq!(dense[row * 3 + c], coarse[(row / r) * 3 + c] + off[c]);
        }
    }
    let rn: Vec<f64> = bias("rn.b").iter().map(|b| b * COORD_SCALE).collect();
    assert_eq!(tape.value(out.rn).data, rn);
}

#[test]
fn velocity_head_stays_in_range_for_any_parameters() {
    let cfg = ModelConfig::default();
    let fx = fixture(1, 1, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for scale in [1.0, 10.0, 1e3] {
        let mut model = PsDcmModel::new(ModelConfig {
            seed: rng.random(),
            ..cfg.clone()
        })
        .unwrap();
        for p in &mut model.params {
            for v in &mut p.values {
                *v = rng.random_range(-scale..scale);
            }
        }
        let pred = infer(&model, &fx.dataset.samples[0], Default::default()).unwrap();
        for (k, (lo, hi)) in CV_RANGES.iter().enumerate() {
            assert!(
                pred.cv[k] >= *lo && pred.cv[k] <= *hi,
                "scale {scale}: {:?}",
                pred.cv
            );
        }
    }
}

#[test]
fn sum_of_squares_and_single_sweep() {
    let mut tape = Tape::new();
    let w = tape.leaf(Mat::from_vec(2, 3, vec![0.5, -1.25, 3.0, 0.0, 7.5, -2.0]));
    let sq = tape.square(w);
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    assert_eq!(
        g.get(w).unwrap().data,
        vec![1.0, -2.5, 6.0, 0.0, 15.0, -4.0]
    );
    assert!(matches!(
        tape.backward(loss),
        Err(TapeError::AlreadyBackpropagated)
    ));
}

#[test]
fn adam_contract_and_convergence() {
    let cfg = AdamConfig::default();
    assert_eq!(cfg.lr_at(30_000), 1e-4 * 0.7);
    assert!((cfg.lr_at(30_000) - 0.7e-4).abs() < 1e-18);

    let still = AdamConfig {
        weight_decay: 0.0,
        ..cfg
    };
    let mut p = vec![vec![0.3, -4.0]];
    let mut st = AdamState::new([2]);
    adam_step(&mut p, &[vec![0.0, 0.0]], &mut st, &still).unwrap();
    assert_eq!(p, vec![vec![0.3, -4.0]]);

    // f(w) = |w|^2
    let bowl = AdamConfig { lr: 1e-2, ..cfg };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut w = vec![(0..10)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect::<Vec<f64>>()];
    let mut st = AdamState::new([10]);
    let f = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>();
    let mut steps = 0;
    while f(&w[0]) >= 1e-6 && steps < 5000 {
        let g = vec![w[0].iter().map(|x| 2.0 * x).collect()];
        adam_step(&mut w, &g, &mut st, &bowl).unwrap();
        steps += 1;
    }
    assert!(f(&w[0]) < 1e-6, "f = {} after {steps} steps", f(&w[0]));
}
