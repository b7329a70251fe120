use std::fmt;

use serde::{Deserialize, Serialize};

use super::prior::PriorKind;
use super::quadrature::integrate;
use crate::error::{Error, Result};

const SPLIT: f64 = 1e-6;
const REL_TOL: f64 = 1e-8;
const MAX_INTERVALS: usize = 2000;
const GRID: usize = 192;
const GRID_DECADES: f64 = 14.0;

/// Plain (not positive-part) James-Stein estimate `x(1 - (d-2)/‖x‖²)`.
pub fn james_stein(x: &[f64]) -> Result<Vec<f64>> {
    let r2 = norm2(x);
    if x.is_empty() {
        return Err(Error::contract("james_stein needs d >= 1"));
    }
    if r2 == 0.0 {
        return Err(Error::Singularity("James-Stein estimate at x = 0".into()));
    }
    let c = 1.0 - (x.len() as f64 - 2.0) / r2;
    Ok(x.iter().map(|v| c * v).collect())
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Posterior moments of β given `‖x‖²` under `N(x; 0, β⁻¹I)·p(β)` on `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaPosterior {
    pub mean: f64,
    pub variance: f64,
}

/// Computes `E[β | x]` and `Var[β | x]` by adaptive quadrature of the three
/// moment integrals in a shared, max-shifted log scale.
pub fn beta_posterior(prior: PriorKind, d: usize, r2: f64) -> Result<BetaPosterior> {
    prior.validate(d)?;
    if !(r2 >= 0.0) || !r2.is_finite() {
        return Err(Error::contract(format!("squared norm must be finite and >= 0, got {r2}")));
    }
    let half_d = d as f64 / 2.0;
    let log_kernel = |beta: f64| half_d * beta.ln() - 0.5 * beta * r2 + prior.log_density(beta);

    // coarse log grid locates the mode so it can be bracketed by breakpoints
    let mut best = (f64::NEG_INFINITY, 1.0);
    let mut grid = Vec::with_capacity(GRID + 1);
    for i in 0..=GRID {
        let beta = 10f64.powf(-GRID_DECADES * (1.0 - i as f64 / GRID as f64));
        let l = log_kernel(beta);
        if l > best.0 {
            best = (l, beta);
        }
        grid.push(beta);
    }
    let shift = best.0;
    let mode_at = grid.iter().position(|&b| b == best.1).expect("mode on grid");
    let mut breaks: Vec<f64> = (1..=5).map(|k| 10f64.powi(-k)).collect();
    breaks.push(SPLIT);
    for j in mode_at.saturating_sub(2)..=(mode_at + 2).min(GRID) {
        breaks.push(grid[j]);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let q = integrate(
        |beta, out: &mut [f64]| {
            let w = if beta > 0.0 { (log_kernel(beta) - shift).exp() } else { 0.0 };
            out[0] = w;
            out[1] = w * beta;
            out[2] = w * beta * beta;
        },
        0.0,
        1.0,
        &breaks,
        3,
        REL_TOL,
        MAX_INTERVALS,
    )?;
    let [m0, m1, m2] = [q.values[0], q.values[1], q.values[2]];
    if !(m0 > 0.0) {
        return Err(Error::numeric("beta_posterior", format!("marginal integral is {m0}")));
    }
    let mean = m1 / m0;
    let variance = (m2 / m0 - mean * mean).max(0.0);
    Ok(BetaPosterior { mean, variance })
}

/// Bayes estimate `x + ∇log m(x) = (1 - E[β|x])·x`.
pub fn bayes_estimate(x: &[f64], prior: PriorKind) -> Result<Vec<f64>> {
    let post = beta_posterior(prior, x.len(), norm2(x))?;
    Ok(x.iter().map(|v| (1.0 - post.mean) * v).collect())
}

/// Estimators of a Gaussian mean from one draw `x ~ N(w̄, I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
pub enum Estimator {
    MaximumLikelihood,
    JamesStein,
    Bayes { prior: PriorKind },
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::MaximumLikelihood => f.write_str("ml"),
            Estimator::JamesStein => f.write_str("james-stein"),
            Estimator::Bayes { .. } => f.write_str("bayes"),
        }
    }
}

impl Estimator {
    pub fn estimate(self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Estimator::MaximumLikelihood => Ok(x.to_vec()),
            Estimator::JamesStein => james_stein(x),
            Estimator::Bayes { prior } => bayes_estimate(x, prior),
        }
    }

    /// Radial form `ŵ = x + c·x`: returns `c` together with the divergence
    /// of the correction `γ(x) = c·x`.
    pub fn correction(self, x: &[f64]) -> Result<(f64, f64)> {
        let d = x.len() as f64;
        let r2 = norm2(x);
        match self {
            Estimator::MaximumLikelihood => Ok((0.0, 0.0)),
            Estimator::JamesStein => {
                if r2 == 0.0 {
                    return Err(Error::Singularity("James-Stein correction at x = 0".into()));
                }
                Ok((-(d - 2.0) / r2, -(d - 2.0).powi(2) / r2))
            }
            Estimator::Bayes { prior } => {
                let post = beta_posterior(prior, x.len(), r2)?;
                Ok((-post.mean, -d * post.mean + r2 * post.variance))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::RngStream;

    #[test]
    fn james_stein_examples() {
        assert_eq!(james_stein(&[0.3, -1.2]).unwrap(), vec![0.3, -1.2]);
        assert_eq!(james_stein(&[1.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        let mut x = vec![0.0; 10];
        x[0] = 2.0;
        let e = james_stein(&x).unwrap();
        assert_eq!(e[0], -2.0);
        assert!(e[1..].iter().all(|&v| v == 0.0));
        assert!(matches!(james_stein(&[0.0; 4]), Err(Error::Singularity(_))));
    }

    /// `E[β]` under the Jeffreys prior in closed form:
    /// `∫₀¹ β^{k-1} e^{-cβ} dβ = γ(k, c) / c^k` with the lower incomplete gamma.
    fn jeffreys_mean_oracle(d: usize, r2: f64) -> f64 {
        // series γ(k, c) = c^k e^{-c} Σ c^n / (k(k+1)…(k+n))
        let lower = |k: f64, c: f64| -> f64 {
            let mut term = 1.0 / k;
            let mut sum = term;
            for n in 1..2000 {
                term *= c / (k + n as f64);
                sum += term;
                if term < 1e-18 * sum {
                    break;
                }
            }
            sum * (-c).exp() // × c^k, cancelled below
        };
        let c = r2 / 2.0;
        let k = d as f64 / 2.0;
        if c > 500.0 {
            // upper tail beyond β = 1 is below e^{-500}: untruncated gamma mean
            return k / c;
        }
        // E[β] = [γ(k+1,c)/c^{k+1}] / [γ(k,c)/c^k]
        lower(k + 1.0, c) / lower(k, c)
    }

    #[test]
    fn jeffreys_mean_matches_incomplete_gamma() {
        for d in [1, 3, 6, 10, 20] {
            for r2 in [0.0, 0.5, 4.0, 30.0, 200.0] {
                let got = beta_posterior(PriorKind::Jeffreys, d, r2).unwrap().mean;
                let want = jeffreys_mean_oracle(d, r2);
                assert!((got / want - 1.0).abs() < 1e-7, "d {d} r2 {r2}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn sharp_posterior_far_from_origin() {
        // ‖x‖ = 100, d = 10: posterior mass sits near β ≈ 8e-4
        let got = beta_posterior(PriorKind::Jeffreys, 10, 1e4).unwrap().mean;
        let want = jeffreys_mean_oracle(10, 1e4);
        assert!((got / want - 1.0).abs() < 1e-7, "{got} vs {want}");
        let mut x = vec![0.0; 10];
        x[3] = 100.0;
        let e = bayes_estimate(&x, PriorKind::Jeffreys).unwrap();
        assert!((e[3] - 100.0).abs() < 0.1 && e[3] < 100.0);
    }

    #[test]
    fn origin_maps_to_origin() {
        for p in [PriorKind::Jeffreys, PriorKind::HalfCauchy] {
            assert_eq!(bayes_estimate(&[0.0; 12], p).unwrap(), vec![0.0; 12]);
        }
    }

    #[test]
    fn estimates_are_radial_shrinkage() {
        let mut rng = RngStream::new(5);
        for prior in [PriorKind::Jeffreys, PriorKind::HalfCauchy, PriorKind::InverseGamma { s: 1.0, t: 1.0 }] {
            for scale in [0.3, 1.0, 3.0] {
                let x: Vec<f64> = rng.normals(12).into_iter().map(|v| scale * v).collect();
                let e = bayes_estimate(&x, prior).unwrap();
                let c = e[0] / x[0];
                assert!((0.0..=1.0).contains(&c), "{prior} factor {c}");
                for (ei, xi) in e.iter().zip(&x) {
                    assert!((ei - c * xi).abs() < 1e-10 * xi.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn divergence_matches_finite_differences() {
        let mut rng = RngStream::new(9);
        for est in [Estimator::JamesStein, Estimator::Bayes { prior: PriorKind::Jeffreys }, Estimator::Bayes { prior: PriorKind::HalfCauchy }] {
            let x: Vec<f64> = rng.normals(6).into_iter().map(|v| 1.5 * v).collect();
            let (_, div) = est.correction(&x).unwrap();
            let h = 1e-5;
            let mut fd = 0.0;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let gp = est.estimate(&xp).unwrap()[i] - xp[i];
                let gm = est.estimate(&xm).unwrap()[i] - xm[i];
                fd += (gp - gm) / (2.0 * h);
            }
            assert!((fd - div).abs() < 1e-5 * div.abs().max(1.0), "{est}: {fd} vs {div}");
        }
    }

    #[test]
    fn invalid_prior_is_rejected() {
        assert!(bayes_estimate(&[1.0, 2.0], PriorKind::HalfCauchy).is_err());
    }
}
