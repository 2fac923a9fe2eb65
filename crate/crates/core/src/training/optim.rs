use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Learning-rate schedule, evaluated per epoch (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scheduler {
    /// Cosine from `lr` at epoch 1 to `final_fraction * lr` at `max_epochs`.
    Cosine { final_fraction: f64 },
    /// Multiply by `gamma` every `step_epochs` epochs.
    Step { step_epochs: usize, gamma: f64 },
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler::Cosine { final_fraction: 0.01 }
    }
}

impl Scheduler {
    pub fn lr(&self, base_lr: f64, epoch: usize, max_epochs: usize) -> f64 {
        match *self {
            Scheduler::Cosine { final_fraction } => {
                let floor = base_lr * final_fraction;
                let span = max_epochs.saturating_sub(1).max(1) as f64;
                let progress = (epoch.saturating_sub(1) as f64 / span).min(1.0);
                floor + 0.5 * (base_lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            Scheduler::Step { step_epochs, gamma } => {
                let steps = epoch.saturating_sub(1) / step_epochs.max(1);
                base_lr * gamma.powi(steps as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Bias-corrected Adam update at step `t >= 1` with learning rate `lr`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    t: u64,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::BadConfig("Adam step count starts at 1".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    let c1 = 1.0 - config.beta1.powf(t as f64);
    let c2 = 1.0 - config.beta2.powf(t as f64);
    let g = grads.tensors();
    let p = params.tensors_mut();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    if g.len() != p.len() {
        return Err(Error::BadShape("gradient structure".into()));
    }
    for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
        if p.len() != g.data.len() {
            return Err(Error::BadShape(format!("gradient {} length", g.name)));
        }
        for i in 0..p.len() {
            let gi = g.data[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Scalar form of one Adam update, for checking by hand.
pub fn adam_scalar(param: f64, grad: f64, m: f64, v: f64, t: u64, lr: f64, c: &AdamConfig) -> (f64, f64, f64) {
    let m = c.beta1 * m + (1.0 - c.beta1) * grad;
    let v = c.beta2 * v + (1.0 - c.beta2) * grad * grad;
    let m_hat = m / (1.0 - c.beta1.powf(t as f64));
    let v_hat = v / (1.0 - c.beta2.powf(t as f64));
    (param - lr * m_hat / (v_hat.sqrt() + c.eps), m, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadKind, ModelConfig};

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_height: 4,
            image_width: 4,
            patch_size: 2,
            embed_dim: 4,
            depth: 1,
            n_heads: 1,
            linformer_k: 2,
            mlp_dim: 4,
            n_channels: 1,
            head: HeadKind::Classify4,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = tiny();
        let mut p = ModelParams::init(&cfg, 1).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut state, 1, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(state, AdamState::new(&before));
    }

    #[test]
    fn first_step_by_hand() {
        let c = AdamConfig::default();
        let (p, _, _) = adam_scalar(1.0, 1.0, 0.0, 0.0, 1, 1e-3, &c);
        assert!((p - (1.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.999).abs() < 1e-10);
    }

    #[test]
    fn second_step_same_magnitude() {
        let c = AdamConfig::default();
        let (p1, m, v) = adam_scalar(1.0, 1.0, 0.0, 0.0, 1, 1e-3, &c);
        let (p2, _, _) = adam_scalar(p1, 1.0, m, v, 2, 1e-3, &c);
        let (u1, u2) = (1.0 - p1, p1 - p2);
        assert!((u2 - u1).abs() / u1 < 0.01);
    }

    #[test]
    fn tensor_update_matches_scalar_form() {
        let cfg = tiny();
        let mut p = ModelParams::init(&cfg, 2).unwrap();
        let mut g = ModelParams::init(&cfg, 3).unwrap();
        g.scale(10.0);
        let mut state = AdamState::new(&p);
        let c = AdamConfig::default();
        let p0 = p.head_w[[1, 2]];
        let g0 = g.head_w[[1, 2]];
        adam_step(&mut p, &g, &mut state, 1, 1e-2, &c).unwrap();
        let (expect, _, _) = adam_scalar(p0, g0, 0.0, 0.0, 1, 1e-2, &c);
        assert_eq!(p.head_w[[1, 2]], expect);
        let mut bad = g.clone();
        bad.head_b[0] = f64::NAN;
        assert!(adam_step(&mut p, &bad, &mut state, 2, 1e-2, &c).is_err());
        assert!(adam_step(&mut p, &g, &mut state, 0, 1e-2, &c).is_err());
    }

    #[test]
    fn schedules() {
        let s = Scheduler::default();
        assert_eq!(s.lr(1e-3, 1, 50), 1e-3);
        assert!((s.lr(1e-3, 50, 50) - 1e-5).abs() < 1e-18);
        assert!(s.lr(1e-3, 25, 50) < s.lr(1e-3, 24, 50));
        let st = Scheduler::Step { step_epochs: 10, gamma: 0.5 };
        assert_eq!(st.lr(1.0, 10, 100), 1.0);
        assert_eq!(st.lr(1.0, 11, 100), 0.5);
        assert_eq!(st.lr(1.0, 21, 100), 0.25);
    }
}
