//! Adam with decoupled weight decay and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(usize),
    #[error("gradient shapes do not match parameters")]
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// The rate is multiplied by `decay_factor` every `decay_every` steps.
    pub decay_every: u64,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
            decay_every: 30_000,
            decay_factor: 0.7,
        }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, iter: u64) -> f64 {
        let drops = iter / self.decay_every.max(1);
        self.lr * self.decay_factor.powi(drops as i32)
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = shapes.into_iter().collect();
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One update. The learning rate uses the step count before the update.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
    {
        return Err(OptimError::Shape);
    }
    if let Some(bad) = grads.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(OptimError::NonFiniteGradient(bad));
    }
    let lr = cfg.lr_at(state.step);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            p[i] -= lr * (update + cfg.weight_decay * p[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_every_interval() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(29_999), 1e-4);
        assert_eq!(cfg.lr_at(30_000), 1e-4 * 0.7);
        assert!((cfg.lr_at(60_000) - 0.49e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![vec![1.0, -2.0, 3.5]];
        let before = p.clone();
        let mut st = AdamState::new([3]);
        for _ in 0..10 {
            adam_step(&mut p, &[vec![0.0; 3]], &mut st, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let cfg = AdamConfig::default();
        let mut p = vec![vec![1.0]];
        let mut st = AdamState::new([1]);
        let err = adam_step(&mut p, &[vec![f64::NAN]], &mut st, &cfg);
        assert_eq!(err, Err(OptimError::NonFiniteGradient(0)));
        assert_eq!(st.step, 0);
        assert_eq!(p, vec![vec![1.0]]);
    }
}
