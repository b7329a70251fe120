//! Gate, dense (plain or variational) and LSTM layers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_alpha, sigmoid, RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Initial log-variance of variational weights.
pub const INIT_LOG_SIGMA2: f64 = -10.0;
/// Default log α above which a weight counts as pruned.
pub const PRUNE_THRESHOLD: f64 = 3.0;
/// Gate sharpness `b`.
pub const GATE_SHARPNESS: f64 = 150.0;
/// Initial gate parameter, σ(150 · 0.02) ≈ 0.95.
pub const GATE_INIT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMode {
    /// Fresh local-reparameterisation noise per call.
    Sample,
    /// Posterior means with pruned weights zeroed.
    Mean,
}

/// Input filter `x = σ(b·κ) ⊙ o`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateLayer {
    pub kappa: Tensor,
    pub sharpness: f64,
}

impl GateLayer {
    pub fn new(width: usize) -> Self {
        Self {
            kappa: Tensor::full(&[width], GATE_INIT),
            sharpness: GATE_SHARPNESS,
        }
    }

    pub fn gate_values(&self) -> Vec<f64> {
        self.kappa
            .data()
            .iter()
            .map(|k| sigmoid(self.sharpness * k))
            .collect()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.kappa.len() {
            return Err(Error::contract(format!(
                "gate width {} vs observation length {}",
                self.kappa.len(),
                obs.len()
            )));
        }
        Ok(self
            .gate_values()
            .iter()
            .zip(obs)
            .map(|(g, o)| g * o)
            .collect())
    }
}

/// Gated features on a tape; κ receives gradients through the sigmoid.
pub fn gate_forward(tape: &mut Tape, kappa: Var, sharpness: f64, obs: Var) -> Result<Var> {
    if tape.value(kappa).len() != tape.value(obs).len() {
        return Err(Error::contract("gate_forward: width mismatch"));
    }
    let scaled = tape.scale(kappa, sharpness);
    let g = tape.sigmoid(scaled);
    Ok(tape.mul(g, obs))
}

/// Dense layer `W x + b`. With `log_sigma2` present each weight carries a
/// Gaussian posterior `N(μ, σ²)` (variational dropout).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub log_sigma2: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Means uniform in ±1/√fan-in, zero bias.
    pub fn init(out: usize, inp: usize, bias: bool, variational: bool, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = (0..out * inp).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self {
            weight: Tensor::matrix(out, inp, w),
            log_sigma2: variational.then(|| Tensor::full(&[out, inp], INIT_LOG_SIGMA2)),
            bias: bias.then(|| Tensor::zeros(&[out])),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn is_variational(&self) -> bool {
        self.log_sigma2.is_some()
    }

    /// Per-weight clamped log α; empty for plain layers.
    pub fn log_alpha(&self) -> Vec<f64> {
        match &self.log_sigma2 {
            Some(ls) => self
                .weight
                .data()
                .iter()
                .zip(ls.data())
                .map(|(&m, &s)| log_alpha(m, s))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.weight];
        v.extend(self.log_sigma2.as_ref());
        v.extend(self.bias.as_ref());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.weight];
        v.extend(self.log_sigma2.as_mut());
        v.extend(self.bias.as_mut());
        v
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        let mut v = vec![format!("{prefix}.weight")];
        if self.log_sigma2.is_some() {
            v.push(format!("{prefix}.log_sigma2"));
        }
        if self.bias.is_some() {
            v.push(format!("{prefix}.bias"));
        }
        v
    }

    /// Registers the layer's tensors on `tape` under consecutive keys starting
    /// at `*key`.
    pub fn bind(&self, tape: &mut Tape, key: &mut usize, mode: ForwardMode) -> LinearVars {
        let mut next = || {
            let k = *key;
            *key += 1;
            k
        };
        let weight = tape.param(next(), self.weight.clone());
        let log_sigma2 = self
            .log_sigma2
            .as_ref()
            .map(|ls| tape.param(next(), ls.clone()));
        let bias = self.bias.as_ref().map(|b| tape.param(next(), b.clone()));
        let (effective, sigma2) = match (log_sigma2, mode) {
            (Some(ls), ForwardMode::Sample) => (weight, Some(tape.exp(ls))),
            (Some(_), ForwardMode::Mean) => {
                let (mask, _) = prune_mask(self, PRUNE_THRESHOLD);
                let mask = Tensor::new(
                    self.weight.shape().to_vec(),
                    mask.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect(),
                );
                let m = tape.constant(mask);
                (tape.mul(weight, m), None)
            }
            (None, _) => (weight, None),
        };
        LinearVars {
            weight,
            log_sigma2,
            bias,
            effective,
            sigma2,
        }
    }
}

/// Tape handles for a bound [`Linear`].
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub log_sigma2: Option<Var>,
    pub bias: Option<Var>,
    effective: Var,
    sigma2: Option<Var>,
}

impl LinearVars {
    /// Without bias. Sample mode on a variational layer draws the
    /// pre-activation from `N(μx, σ²x²)` per output unit.
    pub fn apply_no_bias(&self, tape: &mut Tape, x: Var, rng: &mut RngStream) -> Var {
        let mean = tape.matvec(self.effective, x);
        match self.sigma2 {
            Some(s2) => {
                let x2 = tape.square(x);
                let var = tape.matvec(s2, x2);
                let n = tape.value(mean).len();
                let noise = tape.constant(Tensor::vector(rng.normals(n)));
                tape.reparam(mean, var, noise)
            }
            None => mean,
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, rng: &mut RngStream) -> Var {
        let z = self.apply_no_bias(tape, x, rng);
        match self.bias {
            Some(b) => tape.add(z, b),
            None => z,
        }
    }

    /// Weight-space KL to the log-uniform prior (zero for plain layers).
    pub fn kl(&self, tape: &mut Tape) -> Option<Var> {
        self.log_sigma2
            .map(|ls| tape.kl_log_uniform(self.weight, ls))
    }
}

/// Local-reparameterisation forward of a single variational layer.
pub fn vdo_forward(x: &[f64], layer: &Linear, rng: &mut RngStream, mode: ForwardMode) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("vdo_forward", "non-finite input"));
    }
    if x.len() != layer.in_dim() {
        return Err(Error::contract("vdo_forward: input width mismatch"));
    }
    let mut tape = Tape::new();
    let mut key = 0;
    let vars = layer.bind(&mut tape, &mut key, mode);
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    let out = vars.apply(&mut tape, xv, rng);
    let y = tape.value(out).data().to_vec();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("vdo_forward", "non-finite activations"));
    }
    Ok(y)
}

/// Per-weight pruning decision (`log α > threshold`) and the pruned fraction.
pub fn prune_mask(layer: &Linear, threshold: f64) -> (Vec<bool>, f64) {
    let la = layer.log_alpha();
    if la.is_empty() {
        return (vec![false; layer.weight.len()], 0.0);
    }
    let mask: Vec<bool> = la.iter().map(|&a| a > threshold).collect();
    let pruned = mask.iter().filter(|&&m| m).count();
    let frac = pruned as f64 / mask.len() as f64;
    (mask, frac)
}

/// Zero the means of pruned weights; idempotent.
pub fn apply_prune_mask(layer: &mut Linear, threshold: f64) {
    let (mask, _) = prune_mask(layer, threshold);
    for (w, m) in layer.weight.data_mut().iter_mut().zip(mask) {
        if m {
            *w = 0.0;
        }
    }
}

/// Single-layer LSTM cell, gate order input/forget/cell/output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmCell {
    pub fn init(inp: usize, hidden: usize, variational: bool, rng: &mut RngStream) -> Self {
        // PyTorch-style bound 1/√hidden for both matrices.
        let mut input = Linear::init(4 * hidden, inp, true, variational, rng);
        let bound = 1.0 / (hidden as f64).sqrt();
        for w in input.weight.data_mut() {
            *w = rng.uniform_range(-bound, bound);
        }
        let recurrent = Linear::init(4 * hidden, hidden, false, variational, rng);
        Self {
            input,
            recurrent,
            hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape, key: &mut usize, mode: ForwardMode) -> LstmVars {
        LstmVars {
            input: self.input.bind(tape, key, mode),
            recurrent: self.recurrent.bind(tape, key, mode),
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input: LinearVars,
    pub recurrent: LinearVars,
    pub hidden: usize,
}

/// Hidden and cell vectors on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVarState {
    pub h: Var,
    pub c: Var,
}

impl LstmVars {
    /// One step. `state = None` means the zero state, which skips the
    /// recurrent product entirely.
    pub fn step(
        &self,
        tape: &mut Tape,
        x: Var,
        state: Option<LstmVarState>,
        rng: &mut RngStream,
    ) -> LstmVarState {
        let h = self.hidden;
        let mut z = self.input.apply(tape, x, rng);
        if let Some(s) = state {
            let r = self.recurrent.apply_no_bias(tape, s.h, rng);
            z = tape.add(z, r);
        }
        let zi = tape.slice(z, 0, h);
        let zf = tape.slice(z, h, h);
        let zg = tape.slice(z, 2 * h, h);
        let zo = tape.slice(z, 3 * h, h);
        let i = tape.sigmoid(zi);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let ig = tape.mul(i, g);
        let c = match state {
            Some(s) => {
                let f = tape.sigmoid(zf);
                let fc = tape.mul(f, s.c);
                tape.add(fc, ig)
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        LstmVarState { h, c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variational_layer(out: usize, inp: usize, seed: u64) -> Linear {
        Linear::init(out, inp, true, true, &mut RngStream::new(seed))
    }

    #[test]
    fn gate_zero_kappa_halves_input() {
        let gate = GateLayer {
            kappa: Tensor::zeros(&[3]),
            sharpness: 150.0,
        };
        assert_eq!(gate.forward(&[2.0, -4.0, 1.0]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert!(gate.forward(&[1.0]).is_err());
    }

    #[test]
    fn gate_sharp_values() {
        // σ(7.5) = 1 / (1 + e^{-7.5}), evaluated independently
        let open = 1.0 / (1.0 + (-7.5f64).exp());
        let gate = GateLayer {
            kappa: Tensor::vector(vec![0.05, -0.05]),
            sharpness: 150.0,
        };
        let g = gate.gate_values();
        assert!((g[0] - open).abs() < 1e-15);
        assert!((g[0] - 0.99945).abs() < 1e-5);
        assert!((g[1] - 5.5e-4).abs() < 1e-5);
    }

    #[test]
    fn zero_input_gives_bias_in_both_modes() {
        let mut layer = variational_layer(3, 4, 1);
        layer.bias = Some(Tensor::vector(vec![0.5, -1.0, 2.0]));
        let mut rng = RngStream::new(2);
        let s = vdo_forward(&[0.0; 4], &layer, &mut rng, ForwardMode::Sample).unwrap();
        let m = vdo_forward(&[0.0; 4], &layer, &mut rng, ForwardMode::Mean).unwrap();
        assert_eq!(s, vec![0.5, -1.0, 2.0]);
        assert_eq!(m, s);
    }

    #[test]
    fn tiny_variance_sample_matches_mean() {
        let mut layer = variational_layer(3, 4, 3);
        layer.log_sigma2 = Some(Tensor::full(&[3, 4], (1e-12f64).ln()));
        let x = [0.3, -0.2, 0.9, 1.0];
        let mut rng = RngStream::new(4);
        let s = vdo_forward(&x, &layer, &mut rng, ForwardMode::Sample).unwrap();
        let m = vdo_forward(&x, &layer, &mut rng, ForwardMode::Mean).unwrap();
        for (a, b) in s.iter().zip(&m) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_mode_is_seed_deterministic() {
        let layer = variational_layer(2, 3, 5);
        let x = [1.0, 2.0, 3.0];
        let a = vdo_forward(&x, &layer, &mut RngStream::new(8), ForwardMode::Sample).unwrap();
        let b = vdo_forward(&x, &layer, &mut RngStream::new(8), ForwardMode::Sample).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vdo_rejects_non_finite_input() {
        let layer = variational_layer(2, 2, 5);
        let r = vdo_forward(&[f64::NAN, 0.0], &layer, &mut RngStream::new(0), ForwardMode::Mean);
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }

    #[test]
    fn prune_mask_fractions() {
        let mut layer = variational_layer(2, 2, 6);
        layer.weight = Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        layer.log_sigma2 = Some(Tensor::full(&[2, 2], 5.0));
        assert_eq!(prune_mask(&layer, 3.0).1, 1.0);
        layer.log_sigma2 = Some(Tensor::full(&[2, 2], -5.0));
        assert_eq!(prune_mask(&layer, 3.0).1, 0.0);
        layer.log_sigma2 = Some(Tensor::matrix(2, 2, vec![5.0, -5.0, 4.0, 0.0]));
        let (mask, frac) = prune_mask(&layer, 3.0);
        assert_eq!(mask, vec![true, false, true, false]);
        assert_eq!(frac, 0.5);
    }

    #[test]
    fn prune_mask_idempotent_and_zeroes_mean_forward() {
        let mut layer = variational_layer(2, 2, 7);
        layer.weight = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        layer.log_sigma2 = Some(Tensor::matrix(2, 2, vec![5.0, -5.0, -5.0, 10.0]));
        let y = vdo_forward(&[1.0, 1.0], &layer, &mut RngStream::new(0), ForwardMode::Mean).unwrap();
        assert_eq!(y, vec![2.0, 3.0]);

        let mut once = layer.clone();
        apply_prune_mask(&mut once, 3.0);
        let mut twice = once.clone();
        apply_prune_mask(&mut twice, 3.0);
        assert_eq!(once, twice);
    }
}
