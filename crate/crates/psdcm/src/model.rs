//! Conditional VAE over point cloud + ECG with an activation-parameter head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cardiotwin_core::cohort::{Conditions, CV_RANGES};
use cardiotwin_core::eikonal::N_ROOTS;
use cardiotwin_core::pseudo_ecg::N_LEADS;

use crate::tape::{Mat, Tape, Var};

/// Inputs and outputs in cm are divided by this inside the network.
pub const COORD_SCALE: f64 = 5.0;
pub const N_CONDITIONS: usize = 3;
const COND_EMBED: usize = 16;
/// xyz + part label.
const PC_CHANNELS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite activation after layer {0}")]
    NonFinite(String),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input points, also the ECG sample count.
    pub n_points: usize,
    /// Coarse output points, split evenly between ventricles.
    pub n_coarse: usize,
    /// Dense output points; a multiple of `n_coarse`.
    pub n_dense: usize,
    pub latent: usize,
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_points: 256,
            n_coarse: 128,
            n_dense: 512,
            latent: 64,
            hidden: [256, 128],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.n_points == 0 || self.latent == 0 || self.hidden.contains(&0) {
            return bad("sizes must be positive");
        }
        if self.n_coarse == 0 || !self.n_coarse.is_multiple_of(2) {
            return bad("n_coarse must be even and positive");
        }
        if !self.n_dense.is_multiple_of(self.n_coarse) {
            return bad("n_dense must be a multiple of n_coarse");
        }
        Ok(())
    }

    pub fn expansion(&self) -> usize {
        self.n_dense / self.n_coarse
    }
}

/// Network input for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    /// `n × 4`: xyz in cm, then 0 for LV or 1 for RV.
    pub pc: Mat,
    /// `n × 8`: sample `i` of every lead on row `i`.
    pub ecg: Mat,
    /// `n × 1`: time of the ECG sample on each row, as a fraction of the window.
    pub time: Mat,
    pub conditions: [f64; N_CONDITIONS],
}

impl Input {
    /// Stamps row `i` with time `i / n`.
    pub fn new(pc: Mat, ecg: Mat, conditions: [f64; N_CONDITIONS]) -> Input {
        let n = ecg.rows;
        let time = Mat::from_vec(n, 1, (0..n).map(|i| i as f64 / n as f64).collect());
        Input {
            pc,
            ecg,
            time,
            conditions,
        }
    }
}

/// Conditions mapped to roughly unit scale.
pub fn normalize_conditions(c: &Conditions) -> [f64; N_CONDITIONS] {
    [
        (c.age - 60.0) / 20.0,
        f64::from(c.sex),
        (c.bmi - 27.0) / 4.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode<'a> {
    /// `z = μ + exp(½ logvar) ⊙ noise`.
    Train(&'a [f64]),
    /// `z = μ`.
    Infer,
}

/// Handles to the forward outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    /// `n_coarse × 3`, LV half first.
    pub coarse: Var,
    /// `n_dense × 3`, grouped as the coarse points they expand.
    pub dense: Var,
    /// `n × 8`.
    pub ecg: Var,
    /// `7 × 3`.
    pub rn: Var,
    /// `1 × 4` in cm/s.
    pub cv: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Param {
    pub fn mat(&self) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.values.clone())
    }
}

const CV_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: [Dense; 3],
    mu: Dense,
    logvar: Dense,
    cond: Dense,
    pc: [Dense; 2],
    coarse: Dense,
    offsets: Dense,
    ecg: [Dense; 3],
    head: [Dense; 2],
    rn: Dense,
    cv: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsDcmModel {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

fn layer(
    params: &mut Vec<Param>,
    rng: Option<&mut ChaCha8Rng>,
    name: &str,
    inp: usize,
    out: usize,
) -> Dense {
    scaled_layer(params, rng, name, inp, out, 1.0)
}

fn scaled_layer(
    params: &mut Vec<Param>,
    rng: Option<&mut ChaCha8Rng>,
    name: &str,
    inp: usize,
    out: usize,
    gain: f64,
) -> Dense {
    // Glorot uniform weights times gain, zero bias; without an rng only the shapes are recorded
    let bound = gain * (6.0 / (inp + out) as f64).sqrt();
    let fill = rng.is_some();
    let values = match rng {
        Some(rng) => (0..inp * out)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
        None => Vec::new(),
    };
    params.push(Param {
        name: format!("{name}.w"),
        rows: inp,
        cols: out,
        values,
    });
    params.push(Param {
        name: format!("{name}.b"),
        rows: 1,
        cols: out,
        values: if fill { vec![0.0; out] } else { Vec::new() },
    });
    Dense {
        w: params.len() - 2,
        b: params.len() - 1,
    }
}

fn build(config: &ModelConfig, mut rng: Option<&mut ChaCha8Rng>) -> (Vec<Param>, Layout) {
    let [h0, h1] = config.hidden;
    let d = config.latent;
    let per_point = PC_CHANNELS + 1 + N_LEADS + N_CONDITIONS;
    let dc = d + COND_EMBED;
    let mut p = Vec::new();
    let layout = Layout {
        enc: [
            layer(&mut p, rng.as_deref_mut(), "enc0", per_point, h0),
            layer(&mut p, rng.as_deref_mut(), "enc1", h0, h1),
            layer(&mut p, rng.as_deref_mut(), "enc2", h1, h1),
        ],
        mu: layer(&mut p, rng.as_deref_mut(), "mu", h1, d),
        logvar: layer(&mut p, rng.as_deref_mut(), "logvar", h1, d),
        cond: layer(&mut p, rng.as_deref_mut(), "cond", N_CONDITIONS, COND_EMBED),
        pc: [
            layer(&mut p, rng.as_deref_mut(), "pc0", dc, h0),
            layer(&mut p, rng.as_deref_mut(), "pc1", h0, h1),
        ],
        coarse: layer(
            &mut p,
            rng.as_deref_mut(),
            "coarse",
            h1,
            config.n_coarse * 3,
        ),
        offsets: layer(
            &mut p,
            rng.as_deref_mut(),
            "offsets",
            h1,
            config.n_dense * 3,
        ),
        ecg: [
            layer(&mut p, rng.as_deref_mut(), "ecg0", dc, h0),
            layer(&mut p, rng.as_deref_mut(), "ecg1", h0, h1),
            layer(
                &mut p,
                rng.as_deref_mut(),
                "ecg2",
                h1,
                config.n_points * N_LEADS,
            ),
        ],
        head: [
            layer(&mut p, rng.as_deref_mut(), "head0", dc, h1),
            layer(&mut p, rng.as_deref_mut(), "head1", h1, h1 / 2),
        ],
        rn: layer(&mut p, rng.as_deref_mut(), "rn", h1 / 2, N_ROOTS * 3),
        // small output weights start every velocity near the middle of its range
        cv: scaled_layer(&mut p, rng, "cv", h1 / 2, 4, CV_INIT_GAIN),
    };
    (p, layout)
}

/// Parameter handles for one forward pass.
pub struct Bound {
    pub vars: Vec<Var>,
}

impl PsDcmModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (params, _) = build(&config, Some(&mut rng));
        log::info!(
            "model parameters: {}",
            params.iter().map(|p| p.values.len()).sum::<usize>()
        );
        Ok(PsDcmModel { config, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self, ModelError> {
        let fresh = PsDcmModel::new(config)?;
        if fresh.params.len() != params.len() {
            return Err(ModelError::Config(
                "parameter count differs from config".into(),
            ));
        }
        for (a, b) in fresh.params.iter().zip(&params) {
            if a.name != b.name
                || a.rows != b.rows
                || a.cols != b.cols
                || b.values.len() != a.rows * a.cols
            {
                return Err(ModelError::Config(format!(
                    "parameter {} does not match config",
                    b.name
                )));
            }
        }
        Ok(PsDcmModel {
            config: fresh.config,
            params,
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    fn layout(&self) -> Layout {
        build(&self.config, None).1
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p.mat())).collect(),
        }
    }

    fn dense(tape: &mut Tape, bound: &Bound, l: Dense, x: Var) -> Var {
        let h = tape.matmul(x, bound.vars[l.w]);
        tape.add_row(h, bound.vars[l.b])
    }

    fn dense_tanh(
        tape: &mut Tape,
        bound: &Bound,
        l: Dense,
        x: Var,
        name: &str,
    ) -> Result<Var, ModelError> {
        let h = Self::dense(tape, bound, l, x);
        let h = tape.tanh(h);
        finite(tape, h, name)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: &Input,
        mode: Mode,
    ) -> Result<Outputs, ModelError> {
        let cfg = &self.config;
        let n = cfg.n_points;
        expect_shape("point cloud", (n, PC_CHANNELS), input.pc.shape())?;
        expect_shape("ecg", (n, N_LEADS), input.ecg.shape())?;
        expect_shape("time", (n, 1), input.time.shape())?;
        let l = self.layout();

        let mut pc = input.pc.clone();
        for r in 0..n {
            for c in 0..3 {
                pc.data[r * PC_CHANNELS + c] /= COORD_SCALE;
            }
        }
        let pc = tape.leaf(pc);
        let time = tape.leaf(input.time.clone());
        let ecg = tape.leaf(input.ecg.clone());
        let cond = tape.leaf(Mat::from_vec(1, N_CONDITIONS, input.conditions.to_vec()));
        let cond_rows = tape.broadcast_rows(cond, n);
        let x = tape.concat_cols(&[pc, time, ecg, cond_rows]);

        let h = Self::dense_tanh(tape, bound, l.enc[0], x, "enc0")?;
        let h = Self::dense_tanh(tape, bound, l.enc[1], h, "enc1")?;
        let pooled = tape.max_rows(h);
        let g = Self::dense_tanh(tape, bound, l.enc[2], pooled, "enc2")?;
        let mu = Self::dense(tape, bound, l.mu, g);
        let mu = finite(tape, mu, "mu")?;
        let logvar = Self::dense(tape, bound, l.logvar, g);
        let logvar = finite(tape, logvar, "logvar")?;

        let z = match mode {
            Mode::Infer => mu,
            Mode::Train(noise) => {
                expect_shape("noise", (1, cfg.latent), (1, noise.len()))?;
                let half = tape.scale(logvar, 0.5);
                let std = tape.exp(half);
                let eps = tape.leaf(Mat::from_vec(1, cfg.latent, noise.to_vec()));
                let s = tape.mul(std, eps);
                let z = tape.add(mu, s);
                finite(tape, z, "z")?
            }
        };
        let emb = Self::dense_tanh(tape, bound, l.cond, cond, "cond")?;
        let zc = tape.concat_cols(&[z, emb]);

        let h = Self::dense_tanh(tape, bound, l.pc[0], zc, "pc0")?;
        let h = Self::dense_tanh(tape, bound, l.pc[1], h, "pc1")?;
        let coarse = Self::dense(tape, bound, l.coarse, h);
        let coarse = tape.scale(coarse, COORD_SCALE);
        let coarse = tape.reshape(coarse, cfg.n_coarse, 3);
        let offsets = Self::dense(tape, bound, l.offsets, h);
        let offsets = tape.reshape(offsets, cfg.n_dense, 3);
        let repeated = tape.repeat_rows(coarse, cfg.expansion());
        let dense = tape.add(repeated, offsets);
        let dense = finite(tape, dense, "dense")?;

        let h = Self::dense_tanh(tape, bound, l.ecg[0], zc, "ecg0")?;
        let h = Self::dense_tanh(tape, bound, l.ecg[1], h, "ecg1")?;
        let e = Self::dense(tape, bound, l.ecg[2], h);
        let ecg_out = tape.reshape(e, n, N_LEADS);
        let ecg_out = finite(tape, ecg_out, "ecg2")?;

        let h = Self::dense_tanh(tape, bound, l.head[0], zc, "head0")?;
        let h = Self::dense_tanh(tape, bound, l.head[1], h, "head1")?;
        let rn = Self::dense(tape, bound, l.rn, h);
        let rn = tape.scale(rn, COORD_SCALE);
        let rn = tape.reshape(rn, N_ROOTS, 3);
        let rn = finite(tape, rn, "rn")?;
        let raw = Self::dense(tape, bound, l.cv, h);
        let unit = tape.sigmoid(raw);
        let width = tape.leaf(Mat::from_vec(
            1,
            4,
            CV_RANGES.map(|(lo, hi)| hi - lo).to_vec(),
        ));
        let low = tape.leaf(Mat::from_vec(1, 4, CV_RANGES.map(|(lo, _)| lo).to_vec()));
        let span = tape.mul(unit, width);
        let cv = tape.add(span, low);
        let cv = finite(tape, cv, "cv")?;

        Ok(Outputs {
            mu,
            logvar,
            z,
            coarse,
            dense,
            ecg: ecg_out,
            rn,
            cv,
        })
    }
}

fn expect_shape(
    what: &'static str,
    expected: (usize, usize),
    got: (usize, usize),
) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn finite(tape: &Tape, v: Var, name: &str) -> Result<Var, ModelError> {
    if tape.value(v).data.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(ModelError::NonFinite(name.to_string()))
    }
}

/// Standard normal noise for the reparameterization.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, latent: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..latent).map(|_| StandardNormal.sample(rng)).collect()
}
