use crate::error::{Error, Result};

/// Probability vector over a finite action set.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

const SUM_TOL: f64 = 1e-9;

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("empty categorical distribution"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::contract(format!("invalid probabilities {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::contract(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Softmax of logits; fails on non-finite input.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::numeric("softmax", format!("non-finite logits {logits:?}")));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(Self {
            probs: e.into_iter().map(|v| v / z).collect(),
        })
    }

    /// Construct without validation; caller guarantees a proper distribution.
    pub(crate) fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

/// `Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_categorical(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract("kl_categorical: support sizes differ"));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InfiniteDivergence { index: i, p: pi });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

/// Total variation distance, `0.5 Σ |p − q|`.
pub fn tv_categorical(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract("tv_categorical: support sizes differ"));
    }
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Mix with the uniform distribution so every action has mass at least `eps`:
/// `(1 − n·eps)·p + eps`.
pub fn epsilon_floor(dist: &CategoricalDist, eps: f64) -> Result<CategoricalDist> {
    let n = dist.len() as f64;
    if !(0.0..=1.0 / n).contains(&eps) {
        return Err(Error::contract(format!("epsilon {eps} outside [0, 1/{n}]")));
    }
    Ok(CategoricalDist {
        probs: dist.probs.iter().map(|p| (1.0 - n * eps) * p + eps).collect(),
    })
}
