//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Learning rate at `step` of `total` under cosine decay from `lr_max` to
/// `lr_min`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let progress = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos())
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One AdamW update in place:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// p ← p − lr·( m̂/(√v̂ + ε) + wd·p )
/// ```
pub fn adamw_step(
    params: &mut EncoderParams,
    grads: &EncoderParams,
    state: &mut OptimizerState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let param_tensors = params.tensors_mut();
    let shapes_ok = param_tensors.len() == state.first.len()
        && param_tensors
            .iter()
            .zip(&grad_tensors)
            .zip(&state.first)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(Error::ShapeMismatch("params, grads and optimizer state disagree".into()));
    }
    if grad_tensors.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFiniteGradient);
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    let decay = lr * config.weight_decay;

    for (((p, g), m), v) in param_tensors
        .into_iter()
        .zip(grad_tensors)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + config.eps) + decay * p[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn scalar_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 1,
            hidden_dim: 1,
            out_dim: 1,
            ngram: 1,
            hash_seed: 0,
        }
    }

    fn scalar(p: f64) -> EncoderParams {
        let mut params = EncoderParams::zeros(&scalar_config());
        params.embed_table.as_mut_slice()[0] = p;
        params
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.1, 0.0), 0.1);
        assert!((cosine_lr(100, 100, 0.1, 0.01) - 0.01).abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.1, 0.0) - 0.05).abs() < 1e-15);
        let lrs: Vec<f64> = (0..=10).map(|s| cosine_lr(s, 10, 1.0, 0.0)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = scalar(0.7);
        let g = scalar(0.0);
        let mut state = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut state, 0.1, &cfg).unwrap();
        assert_eq!(p.embed_table.as_slice()[0], 0.7);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = scalar(1.0);
        let g = scalar(1.0);
        let mut state = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut state, 0.1, &cfg).unwrap();
        // m̂ = v̂ = 1 on the first step.
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.embed_table.as_slice()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay() {
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let mut p = scalar(1.0);
        let mut state = OptimizerState::new(&p);
        adamw_step(&mut p, &scalar(0.0), &mut state, 0.1, &cfg).unwrap();
        assert!((p.embed_table.as_slice()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let cfg = TrainConfig::default();
        let enc = EncoderConfig {
            vocab_size: 8,
            hidden_dim: 3,
            out_dim: 4,
            ..EncoderConfig::default()
        };
        let mut p = EncoderParams::init_uniform(&enc, 1, 0.05);
        let before = p.clone();
        let g = EncoderParams::init_uniform(&enc, 2, 1.0);
        let mut state = OptimizerState::new(&p);
        for _ in 0..3 {
            adamw_step(&mut p, &g, &mut state, 0.0, &cfg).unwrap();
        }
        assert_eq!(p, before);
        assert!(state.second.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn rejects_bad_gradients() {
        let cfg = TrainConfig::default();
        let mut p = scalar(1.0);
        let mut state = OptimizerState::new(&p);
        assert!(matches!(
            adamw_step(&mut p, &scalar(f64::NAN), &mut state, 0.1, &cfg),
            Err(Error::NonFiniteGradient)
        ));
        let other = EncoderParams::zeros(&EncoderConfig {
            vocab_size: 2,
            ..scalar_config()
        });
        assert!(matches!(
            adamw_step(&mut p, &other, &mut state, 0.1, &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
