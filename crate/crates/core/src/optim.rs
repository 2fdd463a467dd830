//! Adam with bias correction and a step-decay learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mathx;
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// lr(epoch) = base * gamma^floor(epoch / step_epochs), epochs counted from 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub step_epochs: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base: 0.001, gamma: 0.2, step_epochs: 40 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.base * mathx::powi(self.gamma, (epoch / self.step_epochs) as i32)
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamState { cfg, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over all parameters. `grads` must align
    /// with `params` index-for-index.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(CoreError::InvalidArg {
                op: "adam_step",
                detail: alloc::format!("{} gradients for {} parameters", grads.len(), params.len()),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.get(i).data.len() {
                return Err(CoreError::MissingGradient { name: params.get(i).name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - mathx::powi(self.cfg.beta1, t);
        let bc2 = 1.0 - mathx::powi(self.cfg.beta2, t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = &mut params.get_mut(i).data;
            for j in 0..g.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (mathx::sqrt(v_hat) + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn schedule_decays_every_forty_epochs() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 0.001);
        assert_eq!(s.lr_at(39), 0.001);
        assert!((s.lr_at(40) - 0.0002).abs() < 1e-18);
        assert!((s.lr_at(80) - 0.00004).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut set = ParamSet::new();
        set.push("w".to_string(), vec![2], vec![0.5, -0.25]);
        let mut adam = AdamState::new(&set, AdamConfig::default());
        adam.step(&mut set, &[vec![0.0, 0.0]], 0.001).unwrap();
        assert_eq!(set.get(0).data, vec![0.5, -0.25]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut set = ParamSet::new();
        set.push("w".to_string(), vec![1], vec![0.0]);
        let mut adam = AdamState::new(&set, AdamConfig::default());
        adam.step(&mut set, &[vec![1.0]], 0.001).unwrap();
        // m_hat = v_hat = 1 after bias correction, so the update is
        // -lr / (1 + eps)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((set.get(0).data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn mismatched_gradient_is_an_error() {
        let mut set = ParamSet::new();
        set.push("w".to_string(), vec![2], vec![0.0, 0.0]);
        let mut adam = AdamState::new(&set, AdamConfig::default());
        match adam.step(&mut set, &[vec![1.0]], 0.001) {
            Err(CoreError::MissingGradient { name }) => assert_eq!(name, "w"),
            other => panic!("expected missing-gradient error, got {other:?}"),
        }
    }
}
