use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperprior on the shrinkage parameter β ∈ (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorKind {
    /// `p(β) ∝ β⁻¹`.
    Jeffreys,
    /// `p(β) ∝ β^{s-1} e^{-tβ/2}`.
    InverseGamma { s: f64, t: f64 },
    /// `p(β) ∝ β^{-(s+2t+1)} (1+β)^{-(s+t)}`.
    InverseBeta { s: f64, t: f64 },
    /// Inverse-beta with `s = t = 1/2`.
    HalfCauchy,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorKind::Jeffreys => f.write_str("jeffreys"),
            PriorKind::InverseGamma { s, t } => write!(f, "inverse-gamma({s},{t})"),
            PriorKind::InverseBeta { s, t } => write!(f, "inverse-beta({s},{t})"),
            PriorKind::HalfCauchy => f.write_str("half-cauchy"),
        }
    }
}

/// Exponents of the construction `p ∝ β^{a+b+(d-6)/2} (1+β)^{-b}` (or
/// `e^{-bβ/2}` for the inverse-gamma family).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Construction {
    pub a: f64,
    pub b: f64,
}

impl PriorKind {
    pub fn parse(name: &str, s: Option<f64>, t: Option<f64>) -> Result<Self> {
        let need = |v: Option<f64>, p: &str| v.ok_or_else(|| Error::config(format!("prior '{name}' needs --{p}")));
        match name.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "jeffreys" => Ok(PriorKind::Jeffreys),
            "half-cauchy" | "halfcauchy" => Ok(PriorKind::HalfCauchy),
            "inverse-gamma" | "inversegamma" => Ok(PriorKind::InverseGamma {
                s: need(s, "s")?,
                t: need(t, "t")?,
            }),
            "inverse-beta" | "inversebeta" => Ok(PriorKind::InverseBeta {
                s: need(s, "s")?,
                t: need(t, "t")?,
            }),
            other => Err(Error::config(format!(
                "unknown prior '{other}' (expected jeffreys, inverse-gamma, inverse-beta, half-cauchy)"
            ))),
        }
    }

    fn beta_params(self) -> Option<(f64, f64)> {
        match self {
            PriorKind::InverseBeta { s, t } => Some((s, t)),
            PriorKind::HalfCauchy => Some((0.5, 0.5)),
            _ => None,
        }
    }

    /// `ln p(β)` up to a constant, without range checks.
    pub(crate) fn log_density(self, beta: f64) -> f64 {
        let lb = beta.ln();
        match self {
            PriorKind::Jeffreys => -lb,
            PriorKind::InverseGamma { s, t } => (s - 1.0) * lb - 0.5 * t * beta,
            _ => {
                let (s, t) = self.beta_params().expect("inverse-beta family");
                -(s + 2.0 * t + 1.0) * lb - (s + t) * beta.ln_1p()
            }
        }
    }

    /// Power of β in the density near zero.
    fn origin_exponent(self) -> f64 {
        match self {
            PriorKind::Jeffreys => -1.0,
            PriorKind::InverseGamma { s, .. } => s - 1.0,
            _ => {
                let (s, t) = self.beta_params().expect("inverse-beta family");
                -(s + 2.0 * t + 1.0)
            }
        }
    }

    pub fn construction(self, d: usize) -> Construction {
        let half = (d as f64 - 6.0) / 2.0;
        match self {
            PriorKind::Jeffreys => Construction { a: -1.0 - half, b: 0.0 },
            PriorKind::InverseGamma { s, t } => Construction {
                a: s - (t + d as f64 - 4.0) / 2.0,
                b: t,
            },
            _ => {
                let (s, t) = self.beta_params().expect("inverse-beta family");
                let b = s + t;
                Construction {
                    a: self.origin_exponent() - b - half,
                    b,
                }
            }
        }
    }

    /// Checks that the marginal of a `d`-dimensional observation is finite
    /// and, for the inverse-gamma family, that `(s, t)` meets the
    /// construction constraints `a ≤ 0`, `b ≥ 0`, `a+b ≤ 0`, `1-d ≤ a+b/2`.
    pub fn validate(self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::contract("dimension must be at least 1"));
        }
        if let PriorKind::InverseGamma { s, t } | PriorKind::InverseBeta { s, t } = self {
            if !s.is_finite() || !t.is_finite() {
                return Err(Error::config(format!("{self}: parameters must be finite")));
            }
        }
        if self.origin_exponent() + d as f64 / 2.0 <= -1.0 {
            return Err(Error::config(format!("{self}: marginal diverges at beta -> 0 for d = {d}")));
        }
        if let PriorKind::InverseGamma { t, .. } = self {
            let Construction { a, b } = self.construction(d);
            if t < 0.0 || a > 0.0 || a + b > 0.0 || 1.0 - d as f64 > a + b / 2.0 {
                return Err(Error::config(format!(
                    "{self}: violates a <= 0, b >= 0, a + b <= 0, 1 - d <= a + b/2 (a = {a}, b = {b}, d = {d})"
                )));
            }
        }
        Ok(())
    }

    /// Whether the Bayes estimator is guaranteed to strictly dominate the
    /// maximum-likelihood estimator in dimension `d`.
    pub fn domination_guaranteed(self, d: usize) -> bool {
        if self.validate(d).is_err() {
            return false;
        }
        let Construction { a, b } = self.construction(d);
        let d = d as f64;
        match self {
            PriorKind::Jeffreys => a < 0.0 && a > 1.0 - d,
            PriorKind::InverseGamma { .. } => a <= 0.0 && b >= 0.0 && a + b < 0.0 && 1.0 - d <= a + b / 2.0,
            _ => a <= 0.0 && b >= 0.0 && a / 2.0 + b < 0.0 && 1.0 - d < a + b && a + b <= 0.0,
        }
    }
}

/// Unnormalised `p(β)` on `(0, 1]`.
pub fn prior_beta_density(kind: PriorKind, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::contract(format!("beta must lie in (0, 1], got {beta}")));
    }
    Ok(kind.log_density(beta).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::RngStream;

    #[test]
    fn density_values() {
        assert!((prior_beta_density(PriorKind::Jeffreys, 0.5).unwrap() - 2.0).abs() < 1e-15);
        let hc = prior_beta_density(PriorKind::HalfCauchy, 1.0).unwrap();
        assert!((hc - 0.5).abs() < 1e-15);
        let ib = prior_beta_density(PriorKind::InverseBeta { s: 0.5, t: 0.5 }, 0.3).unwrap();
        let direct = 0.3f64.powf(-2.5) * 1.3f64.powi(-1);
        assert!((ib / direct - 1.0).abs() < 1e-14);
        let ig = prior_beta_density(PriorKind::InverseGamma { s: 2.0, t: 3.0 }, 0.4).unwrap();
        assert!((ig - 0.4 * (-0.6f64).exp()).abs() < 1e-15);
        assert!(prior_beta_density(PriorKind::Jeffreys, 0.0).is_err());
        assert!(prior_beta_density(PriorKind::Jeffreys, 1.1).is_err());
    }

    #[test]
    fn half_cauchy_on_scale_matches_at_unit_beta() {
        // p(z²) ∝ (1+z²)⁻¹ at z² = 1/β = 1 is 1/2, as is the β density
        let pz2 = 1.0 / (1.0 + 1.0);
        assert_eq!(prior_beta_density(PriorKind::HalfCauchy, 1.0).unwrap(), pz2);
    }

    #[test]
    fn jeffreys_maps_to_inverse_scale_density() {
        // log-uniform β on [lo, 1], z = 1/√β ⇒ p(z) ∝ 1/z on [1, lo^{-1/2}]
        let lo: f64 = 1e-4;
        let zmax = lo.powf(-0.5);
        let mut rng = RngStream::new(11);
        let n = 400_000;
        let bins = 8;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let beta = (lo.ln() * rng.uniform()).exp();
            let z = beta.powf(-0.5);
            // log-spaced bins in z: equal mass under 1/z
            let k = ((z.ln() / zmax.ln()) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        let expect = n as f64 / bins as f64;
        for c in counts {
            assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt(), "{c} vs {expect}");
        }
    }

    #[test]
    fn guarantees_follow_the_construction() {
        assert!(!PriorKind::Jeffreys.domination_guaranteed(3));
        assert!(!PriorKind::Jeffreys.domination_guaranteed(4));
        assert!(PriorKind::Jeffreys.domination_guaranteed(5));
        assert!(PriorKind::Jeffreys.domination_guaranteed(6));
        assert!(PriorKind::HalfCauchy.domination_guaranteed(12));
        let c = PriorKind::HalfCauchy.construction(12);
        assert_eq!((c.a, c.b), (-6.5, 1.0));
        // inverse-gamma built from a = -1, b = 1 at d = 8: s = a + (b+d-4)/2
        let ig = PriorKind::InverseGamma { s: 1.5, t: 1.0 };
        let c = ig.construction(8);
        assert_eq!((c.a, c.b), (-1.0, 1.0));
        assert!(!ig.domination_guaranteed(8));
        let ig = PriorKind::InverseGamma { s: 1.0, t: 1.0 };
        assert!(ig.domination_guaranteed(8));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PriorKind::InverseGamma { s: 5.0, t: 1.0 }.validate(4).is_err());
        assert!(PriorKind::InverseBeta { s: 3.0, t: 3.0 }.validate(4).is_err());
        assert!(PriorKind::HalfCauchy.validate(3).is_err());
        assert!(PriorKind::Jeffreys.validate(1).is_ok());
        assert!(PriorKind::parse("inverse-gamma", Some(1.0), None).is_err());
        assert_eq!(PriorKind::parse("Half_Cauchy", None, None).unwrap(), PriorKind::HalfCauchy);
    }
}
