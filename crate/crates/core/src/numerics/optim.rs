use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{KoapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adaptive-moment optimizer state with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
            config,
        }
    }

    /// One update. Entries where `mask` is false are frozen: neither moved
    /// nor decayed, and their moments are untouched.
    pub fn step_masked(&mut self, params: &mut ParamVector, grads: &[f64], mask: Option<&[bool]>) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(KoapError::dim("opt_step", params.len(), grads.len()));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(KoapError::Numerical {
                segment: params.segment_of(i).unwrap_or("?").to_string(),
                detail: "non-finite gradient passed to optimizer".into(),
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let values = params.values_mut();
        for i in 0..values.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
            self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            values[i] -= lr * weight_decay * values[i];
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form: returns the advanced state and updated parameters.
pub fn opt_step(state: &OptimizerState, params: &ParamVector, grads: &[f64]) -> Result<(OptimizerState, ParamVector)> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.step_masked(&mut p, grads, None)?;
    Ok((s, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamVector {
        let mut p = ParamVector::new();
        let s = p.push_zeros("p", &[1]);
        p.get_mut(&s)[0] = v;
        p
    }

    #[test]
    fn zero_gradient_no_decay_is_fixed_point() {
        let p = one_param(0.7);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let s = OptimizerState::new(1, cfg);
        let (s2, p2) = opt_step(&s, &p, &[0.0]).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.step, 1);
    }

    #[test]
    fn descends_on_quadratic() {
        let p = one_param(1.0);
        let s = OptimizerState::new(1, AdamConfig::default());
        let g = 2.0 * p.values()[0];
        let (_, p2) = opt_step(&s, &p, &[g]).unwrap();
        assert!(p2.values()[0].abs() < 1.0);
    }

    #[test]
    fn decoupled_decay_scales_params() {
        let p = one_param(2.0);
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let s = OptimizerState::new(1, cfg);
        let (_, p2) = opt_step(&s, &p, &[0.0]).unwrap();
        assert!((p2.values()[0] - 2.0 * (1.0 - 0.01 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let p = one_param(1.0);
        let s = OptimizerState::new(1, AdamConfig::default());
        assert!(matches!(
            opt_step(&s, &p, &[f64::NAN]),
            Err(KoapError::Numerical { .. })
        ));
        assert!(opt_step(&s, &p, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn step_count_increments() {
        let mut p = one_param(1.0);
        let mut s = OptimizerState::new(1, AdamConfig::default());
        for i in 1..=5 {
            s.step_masked(&mut p, &[0.3], None).unwrap();
            assert_eq!(s.step, i);
            assert_eq!(s.first.len(), p.len());
        }
    }
}
