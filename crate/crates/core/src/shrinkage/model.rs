use serde::{Deserialize, Serialize};

use crate::autodiff::RngStream;
use crate::error::{Error, Result};

/// Two-level Gaussian model of clustered optimal parameters:
/// `w̄_i ~ N(0, (1-β)/β · σ² I)` and `w_ik ~ N(w̄_i, σ² I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub beta: f64,
    pub sigma2: f64,
    pub d: usize,
    /// Number of tasks in each group; the group count is its length.
    pub tasks_per_group: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSample {
    /// `w̄_i`, one per group.
    pub means: Vec<Vec<f64>>,
    /// `w_ik`, indexed `[group][task]`.
    pub params: Vec<Vec<Vec<f64>>>,
}

impl GroupModel {
    pub fn new(beta: f64, sigma2: f64, d: usize, tasks_per_group: Vec<usize>) -> Result<Self> {
        let m = Self {
            beta,
            sigma2,
            d,
            tasks_per_group,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::contract(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::contract(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.d == 0 {
            return Err(Error::contract("dimension must be at least 1"));
        }
        Ok(())
    }

    /// Variance of a single `w_ik` coordinate with `w̄_i` integrated out.
    pub fn marginal_variance(&self) -> f64 {
        self.sigma2 / self.beta
    }

    pub fn group_variance(&self) -> f64 {
        (1.0 - self.beta) / self.beta * self.sigma2
    }
}

pub fn sample_group(model: &GroupModel, rng: &mut RngStream) -> Result<GroupSample> {
    model.validate()?;
    let top = model.group_variance().sqrt();
    let within = model.sigma2.sqrt();
    let mut means = Vec::with_capacity(model.tasks_per_group.len());
    let mut params = Vec::with_capacity(model.tasks_per_group.len());
    for &k in &model.tasks_per_group {
        // β = 1 gives a zero-variance top level; skip the draws so w̄ is exactly 0
        let mean: Vec<f64> = if top == 0.0 {
            vec![0.0; model.d]
        } else {
            (0..model.d).map(|_| top * rng.normal()).collect()
        };
        let tasks = (0..k)
            .map(|_| mean.iter().map(|m| m + within * rng.normal()).collect())
            .collect();
        means.push(mean);
        params.push(tasks);
    }
    Ok(GroupSample { means, params })
}

/// Posterior mean of `w̄_i` given one task's parameters: `(1-β)·w`.
pub fn posterior_mean(w: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::contract(format!("beta must lie in (0, 1], got {beta}")));
    }
    Ok(w.iter().map(|x| (1.0 - beta) * x).collect())
}
