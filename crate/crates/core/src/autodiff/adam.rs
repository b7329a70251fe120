use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment accumulators for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor]) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::contract(format!(
                    "adam: shape mismatch at tensor {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(p.iter_mut(), &[Tensor::vector(vec![0.0, 0.0])]).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_matches_scalar_recurrence() {
        // Scalar Adam evaluated by hand.
        let (lr, b1, b2, eps, g): (f64, f64, f64, f64, f64) = (0.01, 0.9, 0.999, 1e-8, 0.3);
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let expected = 1.0 - lr * (m / (1.0 - b1)) / ((v / (1.0 - b2)).sqrt() + eps);

        let mut p = vec![Tensor::vector(vec![1.0])];
        let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps };
        let mut s = AdamState::new(cfg, &p);
        s.step(p.iter_mut(), &[Tensor::vector(vec![g])]).unwrap();
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        // ≈ −lr · g / (|g| + ε)
        assert!((p[0].data()[0] - (1.0 - lr)).abs() < 1e-9);
    }

    #[test]
    fn second_moment_recurrence() {
        let g = 0.5;
        let mut p = vec![Tensor::vector(vec![0.0])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let grads = [Tensor::vector(vec![g])];
        s.step(p.iter_mut(), &grads).unwrap();
        let v1 = s.second_moment()[0].data()[0];
        s.step(p.iter_mut(), &grads).unwrap();
        let v2 = s.second_moment()[0].data()[0];
        assert_eq!(v2, 0.999 * v1 + (1.0 - 0.999) * g * g);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let mut p = vec![Tensor::vector(vec![0.0, 1.0])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(s.step(p.iter_mut(), &[Tensor::vector(vec![1.0])]).is_err());
    }
}
