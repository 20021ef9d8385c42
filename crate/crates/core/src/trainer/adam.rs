use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            eps: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[3.0, -0.5, 1e-3], &mut s, &cfg).unwrap();
        for (got, want) in p.iter().zip([-0.1, 0.1, -0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn three_step_scalar_trace() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            beta1: 0.5,
            beta2: 0.75,
            eps: 1e-8,
        };
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        for g in [2.0, -1.0, 4.0] {
            adam_step(&mut p, &[g], &mut s, &cfg).unwrap();
        }
        // m: 1.0, 0.0, 2.0; v: 1.0, 1.0, 4.75
        // corrections: (0.5, 0.25), (0.75, 0.4375), (0.875, 0.578125)
        let step = |m: f64, v: f64, c1: f64, c2: f64| 0.01 * (m / c1) / ((v / c2).sqrt() + 1e-8);
        let want = 1.0
            - step(1.0, 1.0, 0.5, 0.25)
            - step(0.0, 1.0, 0.75, 0.4375)
            - step(2.0, 4.75, 0.875, 0.578125);
        assert!((p[0] - want).abs() < 1e-15);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[1.0], &mut s, &AdamConfig::default()).is_err());
    }
}
