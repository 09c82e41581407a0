use std::collections::BTreeMap;

use super::error::{AutodiffError, Result};
use super::params::ParamStore;
use super::tape::ParamGrads;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created on first use and
/// keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.moments.get(name).map(|(m, _)| m.as_slice())
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.moments.get(name).map(|(_, v)| v.as_slice())
    }

    /// Update every parameter in `params`. All gradients are validated before
    /// anything is written, so a failed step leaves parameters untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        for (name, value) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| AutodiffError::MissingGradient(name.to_string()))?;
            if g.shape() != value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    left: value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, value) in params.iter_mut() {
            let g = &grads[name];
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (((p, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(w: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![w]));
        p
    }

    fn grad(g: f64) -> ParamGrads {
        [("w".to_string(), Tensor::vector(vec![g]))].into_iter().collect()
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &grad(1.0)).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.7);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &grad(0.0)).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut prev = 1.0;
        for _ in 0..2 {
            adam.step(&mut p, &grad(1.0)).unwrap();
            let w = p.get("w").unwrap().data()[0];
            assert!(w < prev);
            prev = w;
        }
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = single(1.0);
        p.insert("bias", Tensor::vector(vec![0.0]));
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.step(&mut p, &grad(1.0)).unwrap_err();
        assert_eq!(err, AutodiffError::MissingGradient("bias".into()));
        assert_eq!(adam.steps(), 0);
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }
}
