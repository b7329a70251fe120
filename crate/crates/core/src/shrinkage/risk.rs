use serde::{Deserialize, Serialize};

use super::estimators::{norm2, Estimator};
use super::prior::PriorKind;
use crate::autodiff::RngStream;
use crate::error::{Error, Result};

pub const MIN_RISK_SAMPLES: usize = 10_000;
pub const MIN_SWEEP_SAMPLES: usize = 100_000;

/// Monte-Carlo risk estimate with its 95% confidence half-width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub estimator: String,
    pub d: usize,
    pub mean_norm: f64,
    pub n: usize,
    pub mse: f64,
    pub ci: f64,
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn ci(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let sd = (self.m2 / (self.n - 1) as f64).sqrt();
        1.96 * sd / (self.n as f64).sqrt()
    }
}

/// `w̄ = (‖w̄‖, 0, …, 0)`; risks are rotation invariant.
pub fn axis_mean(d: usize, norm: f64) -> Vec<f64> {
    let mut w = vec![0.0; d];
    if d > 0 {
        w[0] = norm;
    }
    w
}

fn check_n(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::contract(format!("need at least {min} samples, got {n}")));
    }
    Ok(())
}

fn draw(mean: &[f64], rng: &mut RngStream) -> Vec<f64> {
    mean.iter().map(|m| m + rng.normal()).collect()
}

fn report(estimator: Estimator, mean: &[f64], acc: &Welford) -> RiskReport {
    RiskReport {
        estimator: estimator.to_string(),
        d: mean.len(),
        mean_norm: norm2(mean).sqrt(),
        n: acc.n,
        mse: acc.mean,
        ci: acc.ci(),
    }
}

/// Direct MC average of `‖ŵ(x) - w̄‖²` over `x ~ N(w̄, I)`.
pub fn mse_monte_carlo(estimator: Estimator, mean: &[f64], n: usize, rng: &mut RngStream) -> Result<RiskReport> {
    check_n(n, MIN_RISK_SAMPLES)?;
    let mut acc = Welford::default();
    for _ in 0..n {
        let x = draw(mean, rng);
        let e = estimator.estimate(&x)?;
        acc.push(e.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum());
    }
    Ok(report(estimator, mean, &acc))
}

/// Stein's unbiased risk estimate `d + ‖γ‖² + 2∇·γ` averaged over samples,
/// with `correction` returning `(γ(x), ∇·γ(x))`.
pub fn sure_from_samples<F>(samples: &[Vec<f64>], mut correction: F) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, f64)>,
{
    let mut acc = Welford::default();
    for x in samples {
        let (g, div) = correction(x)?;
        acc.push(x.len() as f64 + norm2(&g) + 2.0 * div);
    }
    if acc.n == 0 {
        return Err(Error::Empty("no samples for SURE".into()));
    }
    Ok((acc.mean, acc.ci()))
}

/// SURE for a radial estimator, drawing `x ~ N(w̄, I)`.
pub fn sure_risk(estimator: Estimator, mean: &[f64], n: usize, rng: &mut RngStream) -> Result<RiskReport> {
    check_n(n, MIN_RISK_SAMPLES)?;
    let mut acc = Welford::default();
    for _ in 0..n {
        let x = draw(mean, rng);
        let (c, div) = estimator.correction(&x)?;
        acc.push(x.len() as f64 + c * c * norm2(&x) + 2.0 * div);
    }
    let mut r = report(estimator, mean, &acc);
    r.estimator = format!("{}-sure", r.estimator);
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Upper CI bound below `d` at every grid point.
    Dominates,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Dominates => "dominates",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationTable {
    pub prior: PriorKind,
    pub d: usize,
    pub rows: Vec<RiskReport>,
    pub verdict: Verdict,
    /// Whether the prior's construction guarantees domination in `d`.
    pub guaranteed: bool,
}

/// Bayes-estimator risk at each `‖w̄‖` of the grid; each point gets its
/// own sub-stream of `rng`.
pub fn domination_sweep(prior: PriorKind, d: usize, norms: &[f64], n: usize, rng: &RngStream) -> Result<DominationTable> {
    check_n(n, MIN_SWEEP_SAMPLES)?;
    prior.validate(d)?;
    if norms.is_empty() {
        return Err(Error::Empty("mean-norm grid".into()));
    }
    let est = Estimator::Bayes { prior };
    let rows = norms
        .iter()
        .enumerate()
        .map(|(i, &norm)| mse_monte_carlo(est, &axis_mean(d, norm), n, &mut rng.split(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let verdict = if rows.iter().all(|r| r.mse + r.ci < d as f64) {
        Verdict::Dominates
    } else {
        Verdict::Inconclusive
    };
    Ok(DominationTable {
        prior,
        d,
        rows,
        verdict,
        guaranteed: prior.domination_guaranteed(d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ml_risk_is_dimension() {
        let mut rng = RngStream::new(1);
        let r = mse_monte_carlo(Estimator::MaximumLikelihood, &axis_mean(10, 3.0), 20_000, &mut rng).unwrap();
        assert!((r.mse - 10.0).abs() < 3.0 * r.ci, "{r:?}");
        let (s, ci) = sure_from_samples(&[vec![1.0; 4], vec![-2.0; 4]], |x| Ok((vec![0.0; x.len()], 0.0))).unwrap();
        assert_eq!((s, ci), (4.0, 0.0));
    }

    #[test]
    fn james_stein_at_origin_has_risk_two() {
        let mut rng = RngStream::new(2);
        let r = mse_monte_carlo(Estimator::JamesStein, &axis_mean(10, 0.0), 20_000, &mut rng).unwrap();
        assert!((r.mse - 2.0).abs() < r.ci, "{r:?}");
        let d2 = mse_monte_carlo(Estimator::JamesStein, &axis_mean(2, 1.0), 10_000, &mut RngStream::new(3)).unwrap();
        let ml = mse_monte_carlo(Estimator::MaximumLikelihood, &axis_mean(2, 1.0), 10_000, &mut RngStream::new(3)).unwrap();
        assert_eq!(d2.mse, ml.mse);
    }

    #[test]
    fn sure_matches_direct_monte_carlo() {
        for norm in [0.0, 1.0, 5.0] {
            let mean = axis_mean(10, norm);
            let direct = mse_monte_carlo(Estimator::JamesStein, &mean, 20_000, &mut RngStream::new(4)).unwrap();
            let sure = sure_risk(Estimator::JamesStein, &mean, 20_000, &mut RngStream::new(40)).unwrap();
            assert!((direct.mse - sure.mse).abs() < direct.ci + sure.ci, "{norm}: {direct:?} {sure:?}");
        }
    }

    #[test]
    fn small_samples_rejected() {
        let mut rng = RngStream::new(0);
        assert!(mse_monte_carlo(Estimator::MaximumLikelihood, &[0.0; 3], 100, &mut rng).is_err());
        assert!(domination_sweep(PriorKind::Jeffreys, 6, &[0.0], 1000, &rng).is_err());
    }
}
