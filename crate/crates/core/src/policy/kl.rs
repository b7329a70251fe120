//! Weight-space KL between a factorised Gaussian posterior and the
//! log-uniform (normal-Jeffreys) prior.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kl_from_log_alpha, RngStream, LOG_ALPHA_MAX, LOG_ALPHA_MIN};
use crate::error::{Error, Result};

/// Log α at which the oracle's additive constant is pinned to the approximation.
pub const ORACLE_ANCHOR: f64 = 20.0;

/// Polynomial-sigmoid approximation of the per-weight KL at a given log α,
/// without clamping.
pub fn kl_log_uniform_approx(log_alpha: f64) -> f64 {
    kl_from_log_alpha(log_alpha)
}

/// Total KL in nats over weights given their log α values, each clamped to
/// [−8, 8] first.
pub fn kl_log_uniform(log_alpha: &[f64]) -> f64 {
    log_alpha
        .iter()
        .map(|la| kl_from_log_alpha(la.clamp(LOG_ALPHA_MIN, LOG_ALPHA_MAX)))
        .sum()
}

/// `E log|1 + √α·ε|` over shared standard-normal draws.
fn mean_log_abs(log_alpha: f64, noise: &[f64]) -> f64 {
    let s = (0.5 * log_alpha).exp();
    noise.iter().map(|e| (1.0 + s * e).abs().ln()).sum::<f64>() / noise.len() as f64
}

/// Monte-Carlo KL between `N(θ, αθ²)` and `p(w) ∝ 1/|w|`.
///
/// With `w = θ(1 + √α ε)` the divergence is
/// `-½ log(2πe α) + E log|1 + √α ε| + C`, free of θ. The unknown constant of
/// the improper prior is fixed so the oracle equals the approximation at
/// `log α = 20`.
pub fn kl_log_uniform_mc(log_alpha: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if noise.is_empty() {
        return Err(Error::Empty("MC oracle needs samples".into()));
    }
    let raw = |la: f64| -0.5 * la + mean_log_abs(la, noise);
    let c = kl_from_log_alpha(ORACLE_ANCHOR) - raw(ORACLE_ANCHOR);
    Ok(log_alpha.iter().map(|&la| raw(la) + c).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlOracleRow {
    pub log_alpha: f64,
    pub approx: f64,
    pub monte_carlo: f64,
    pub abs_diff: f64,
    /// Approximation does not increase from the previous grid point.
    pub monotone: bool,
}

/// Approximation against the MC oracle over a grid of log α.
pub fn kl_oracle_table(grid: &[f64], samples: usize, seed: u64) -> Result<Vec<KlOracleRow>> {
    if grid.is_empty() {
        return Err(Error::Empty("log-alpha grid".into()));
    }
    if let Some(la) = grid.iter().find(|la| !(LOG_ALPHA_MIN..=LOG_ALPHA_MAX).contains(*la)) {
        return Err(Error::contract(format!("grid point {la} outside [{LOG_ALPHA_MIN}, {LOG_ALPHA_MAX}]")));
    }
    let noise = RngStream::new(seed).derive("kl-oracle").normals(samples);
    let mc = kl_log_uniform_mc(grid, &noise)?;
    let mut prev = f64::INFINITY;
    Ok(grid
        .iter()
        .zip(mc)
        .map(|(&la, m)| {
            let a = kl_log_uniform_approx(la);
            let row = KlOracleRow {
                log_alpha: la,
                approx: a,
                monte_carlo: m,
                abs_diff: (a - m).abs(),
                monotone: a <= prev,
            };
            prev = a;
            row
        })
        .collect())
}
