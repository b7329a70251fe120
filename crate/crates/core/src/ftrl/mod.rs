//! Tabular simulator of the default policy as follow-the-regularized-leader
//! over Gaussian distributions on softmax logits.
//!
//! Tasks are deterministic optimal policies on `S` states. The learner keeps
//! a diagonal Gaussian `ν` over an `S×A` logit table and after each task
//! minimises `w·KL[ν‖p] + Σ_i ℓ_i(ν)` with reparameterised Adam, where
//! `ℓ_i(ν) = E_{w∼ν} (1/S) Σ_s −log π_w^ε(a*_is | s)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, RngStream, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtrlConfig {
    pub states: usize,
    pub actions: usize,
    /// Probability that a task redraws the optimal action at a state
    /// instead of copying the cluster's base map.
    pub perturbation: f64,
    pub epsilon: f64,
    /// Variance of the isotropic Gaussian prior over logits.
    pub prior_var: f64,
    /// Multiplier on `KL[ν‖p]` in the FTRL objective.
    pub prior_weight: f64,
    pub inner_steps: usize,
    pub barycenter_steps: usize,
    pub lr: f64,
    /// Fixed noise draws used to evaluate losses for regret accounting.
    pub eval_samples: usize,
}

impl Default for FtrlConfig {
    fn default() -> Self {
        Self {
            states: 6,
            actions: 4,
            perturbation: 0.5,
            epsilon: 1e-3,
            prior_var: 1.0,
            prior_weight: 1.0,
            inner_steps: 2_000,
            barycenter_steps: 10_000,
            lr: 0.02,
            eval_samples: 512,
        }
    }
}

impl FtrlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states < 2 || self.actions < 2 {
            return Err(Error::config("need at least 2 states and 2 actions"));
        }
        if !(0.0..=1.0).contains(&self.perturbation) {
            return Err(Error::config("perturbation must lie in [0, 1]"));
        }
        if !(self.epsilon > 0.0) || self.epsilon * self.actions as f64 >= 1.0 {
            return Err(Error::config("epsilon must satisfy 0 < epsilon < 1/A"));
        }
        if !(self.prior_var > 0.0) || !(self.prior_weight >= 0.0) || !(self.lr > 0.0) {
            return Err(Error::config("prior_var and lr must be positive, prior_weight >= 0"));
        }
        if self.inner_steps == 0 || self.barycenter_steps == 0 || self.eval_samples == 0 {
            return Err(Error::config("step and sample counts must be positive"));
        }
        Ok(())
    }
}

/// Deterministic optimal policy: one action per state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularTask {
    pub actions: usize,
    pub optimal: Vec<usize>,
}

/// A cluster of tasks around a base map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub actions: usize,
    pub base: Vec<usize>,
    pub perturbation: f64,
}

impl TaskDistribution {
    pub fn new(states: usize, actions: usize, perturbation: f64, rng: &mut RngStream) -> Result<Self> {
        if states < 2 || actions < 2 {
            return Err(Error::contract("need at least 2 states and 2 actions"));
        }
        if !(0.0..=1.0).contains(&perturbation) {
            return Err(Error::contract("perturbation must lie in [0, 1]"));
        }
        Ok(Self {
            actions,
            base: (0..states).map(|_| rng.below(actions)).collect(),
            perturbation,
        })
    }
}

pub fn sample_task(dist: &TaskDistribution, rng: &mut RngStream) -> TabularTask {
    let optimal = dist
        .base
        .iter()
        .map(|&a| {
            // draw both so the stream advances identically for any perturbation
            let redraw = rng.uniform() < dist.perturbation;
            let fresh = rng.below(dist.actions);
            if redraw {
                fresh
            } else {
                a
            }
        })
        .collect();
    TabularTask {
        actions: dist.actions,
        optimal,
    }
}

/// Diagonal Gaussian over an `S×A` logit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefaultDistribution {
    pub states: usize,
    pub actions: usize,
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DefaultDistribution {
    pub fn prior(states: usize, actions: usize, var: f64) -> Self {
        Self {
            states,
            actions,
            mean: vec![0.0; states * actions],
            log_var: vec![var.ln(); states * actions],
        }
    }

    fn sample_into(&self, noise: &[f64], w: &mut [f64]) {
        for i in 0..w.len() {
            w[i] = self.mean[i] + (0.5 * self.log_var[i]).exp() * noise[i];
        }
    }

    /// ε-floored policy of the mean logits at `state`.
    pub fn mean_policy(&self, state: usize, epsilon: f64) -> Vec<f64> {
        let a = self.actions;
        floored(&softmax(&self.mean[state * a..(state + 1) * a]), epsilon)
    }

    /// Closed-form `KL[ν ‖ N(0, var·I)]`.
    pub fn prior_kl(&self, var: f64) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_var)
            .map(|(&m, &lv)| gaussian_kl(m, lv.exp(), 0.0, var))
            .sum()
    }
}

/// `KL[N(m1, v1) ‖ N(m2, v2)]` in one dimension.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * ((v1 + (m1 - m2).powi(2)) / v2 - 1.0 + (v2 / v1).ln())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn floored(p: &[f64], epsilon: f64) -> Vec<f64> {
    let keep = 1.0 - p.len() as f64 * epsilon;
    p.iter().map(|v| keep * v + epsilon).collect()
}

/// Per-state, per-action counts of optimal actions over a task history.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub states: usize,
    pub actions: usize,
    pub counts: Vec<f64>,
    pub tasks: usize,
}

impl History {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            counts: vec![0.0; states * actions],
            tasks: 0,
        }
    }

    pub fn from_tasks(states: usize, actions: usize, tasks: &[TabularTask]) -> Result<Self> {
        let mut h = Self::new(states, actions);
        for t in tasks {
            h.push(t)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, task: &TabularTask) -> Result<()> {
        if task.optimal.len() != self.states || task.actions != self.actions {
            return Err(Error::contract("task shape does not match the history"));
        }
        for (s, &a) in task.optimal.iter().enumerate() {
            if a >= self.actions {
                return Err(Error::contract(format!("optimal action {a} out of range")));
            }
            self.counts[s * self.actions + a] += 1.0;
        }
        self.tasks += 1;
        Ok(())
    }
}

/// `(1/S) Σ_{s,a} c_sa · −log π_w^ε(a|s)` and, if `grad` is given, its
/// gradient with respect to the logits `w`.
fn weighted_nll(w: &[f64], counts: &[f64], states: usize, actions: usize, epsilon: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let keep = 1.0 - actions as f64 * epsilon;
    let mut total = 0.0;
    for s in 0..states {
        let row = s * actions..(s + 1) * actions;
        let p = softmax(&w[row.clone()]);
        let c = &counts[row.clone()];
        let mut coef = vec![0.0; actions];
        for a in 0..actions {
            if c[a] == 0.0 {
                continue;
            }
            let pe = keep * p[a] + epsilon;
            total -= c[a] * pe.ln();
            coef[a] = c[a] * keep * p[a] / pe;
        }
        if let Some(g) = grad.as_deref_mut() {
            // d(−ln π^ε_a)/dz_j = −(1−Aε) p_a (δ_aj − p_j) / π^ε_a
            let sum: f64 = coef.iter().sum();
            for j in 0..actions {
                g[s * actions + j] = (-coef[j] + sum * p[j]) / states as f64;
            }
        }
    }
    total / states as f64
}

/// Loss estimate with the per-state breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEstimate {
    pub mean: f64,
    pub per_state: Vec<f64>,
    /// Largest single-sample per-state loss seen.
    pub max_state_loss: f64,
}

/// `ℓ(ν)` for one task, averaged over the given standard-normal draws.
pub fn loss_with_noise(nu: &DefaultDistribution, task: &TabularTask, epsilon: f64, noise: &[Vec<f64>]) -> Result<LossEstimate> {
    if noise.is_empty() {
        return Err(Error::contract("loss needs at least one MC sample"));
    }
    if task.optimal.len() != nu.states || task.actions != nu.actions {
        return Err(Error::contract("task shape does not match the distribution"));
    }
    let a = nu.actions;
    let mut w = vec![0.0; nu.mean.len()];
    let mut per_state = vec![0.0; nu.states];
    let mut max_state_loss: f64 = 0.0;
    for xi in noise {
        nu.sample_into(xi, &mut w);
        for (s, &opt) in task.optimal.iter().enumerate() {
            let p = floored(&softmax(&w[s * a..(s + 1) * a]), epsilon);
            let l = -p[opt].ln();
            per_state[s] += l;
            max_state_loss = max_state_loss.max(l);
        }
    }
    for v in &mut per_state {
        *v /= noise.len() as f64;
    }
    Ok(LossEstimate {
        mean: per_state.iter().sum::<f64>() / nu.states as f64,
        per_state,
        max_state_loss,
    })
}

pub fn loss(nu: &DefaultDistribution, task: &TabularTask, epsilon: f64, samples: usize, rng: &mut RngStream) -> Result<LossEstimate> {
    let noise: Vec<Vec<f64>> = (0..samples).map(|_| rng.normals(nu.mean.len())).collect();
    loss_with_noise(nu, task, epsilon, &noise)
}

/// Prior term of the inner objective; `None` for the barycenter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorTerm {
    pub var: f64,
    pub weight: f64,
}

/// Minimises `weight·KL[ν‖p] + Σ_sa c_sa·E −log π^ε` from `init` with
/// single-sample reparameterised gradients.
pub fn optimize(
    init: &DefaultDistribution,
    history: &History,
    prior: Option<PriorTerm>,
    epsilon: f64,
    steps: usize,
    lr: f64,
    rng: &mut RngStream,
) -> Result<DefaultDistribution> {
    if history.tasks == 0 {
        return Err(Error::contract("FTRL needs a nonempty task history"));
    }
    if history.states != init.states || history.actions != init.actions {
        return Err(Error::contract("history shape does not match the distribution"));
    }
    let n = init.mean.len();
    let mut params = vec![Tensor::vector(init.mean.clone()), Tensor::vector(init.log_var.clone())];
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), &params);
    let mut w = vec![0.0; n];
    let mut gw = vec![0.0; n];
    let window = (steps / 10).clamp(1, 100);
    let (mut head, mut tail) = (0.0, 0.0);
    for step in 0..steps {
        let xi = rng.normals(n);
        let (mean, log_var) = (params[0].data(), params[1].data());
        let sd: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
        for i in 0..n {
            w[i] = mean[i] + sd[i] * xi[i];
        }
        let mut obj = weighted_nll(&w, &history.counts, history.states, history.actions, epsilon, Some(&mut gw));
        let mut g_mean = gw.clone();
        let mut g_lv: Vec<f64> = (0..n).map(|i| gw[i] * xi[i] * 0.5 * sd[i]).collect();
        if let Some(PriorTerm { var, weight }) = prior {
            for i in 0..n {
                obj += weight * gaussian_kl(mean[i], sd[i] * sd[i], 0.0, var);
                g_mean[i] += weight * mean[i] / var;
                g_lv[i] += weight * 0.5 * (sd[i] * sd[i] / var - 1.0);
            }
        }
        if !obj.is_finite() {
            return Err(Error::numeric("ftrl optimize", format!("objective {obj} at step {step}")));
        }
        if step < window {
            head += obj;
        }
        if step >= steps - window {
            tail += obj;
        }
        adam.step(params.iter_mut(), &[Tensor::vector(g_mean), Tensor::vector(g_lv)])?;
    }
    if tail > 10.0 * head.max(f64::MIN_POSITIVE) {
        return Err(Error::numeric(
            "ftrl optimize",
            format!("objective grew from {:.4} to {:.4}", head / window as f64, tail / window as f64),
        ));
    }
    Ok(DefaultDistribution {
        states: init.states,
        actions: init.actions,
        mean: params[0].data().to_vec(),
        log_var: params[1].data().to_vec(),
    })
}

/// One FTRL step: warm-started minimisation of prior KL plus summed losses.
pub fn ftrl_update(current: &DefaultDistribution, history: &History, cfg: &FtrlConfig, rng: &mut RngStream) -> Result<DefaultDistribution> {
    let prior = PriorTerm {
        var: cfg.prior_var,
        weight: cfg.prior_weight,
    };
    optimize(current, history, Some(prior), cfg.epsilon, cfg.inner_steps, cfg.lr, rng)
}

/// Best fixed distribution in hindsight (no prior term, longer budget).
pub fn barycenter(init: &DefaultDistribution, history: &History, cfg: &FtrlConfig, rng: &mut RngStream) -> Result<DefaultDistribution> {
    optimize(init, history, None, cfg.epsilon, cfg.barycenter_steps, cfg.lr, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRegret {
    pub k: usize,
    pub seed: u64,
    pub avg_regret: f64,
    pub online_loss: f64,
    pub barycenter_loss: f64,
    pub prior_kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub k: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub runs: Vec<SeedRegret>,
    pub points: Vec<RegretPoint>,
    /// Least-squares slope of `ln mean regret` against `ln K`.
    pub slope: f64,
    pub max_state_loss: f64,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Per-seed regrets for every `K` in the grid, reusing one task sequence
/// and one FTRL trajectory per seed.
pub fn regret_for_seed(cfg: &FtrlConfig, ks: &[usize], seed: u64) -> Result<(Vec<SeedRegret>, f64)> {
    let root = RngStream::new(seed);
    let dist = TaskDistribution::new(cfg.states, cfg.actions, cfg.perturbation, &mut root.derive("cluster"))?;
    let kmax = *ks.last().expect("nonempty grid");
    let mut task_rng = root.derive("tasks");
    let tasks: Vec<TabularTask> = (0..kmax).map(|_| sample_task(&dist, &mut task_rng)).collect();
    let mut eval_rng = root.derive("eval");
    let n = cfg.states * cfg.actions;
    let noise: Vec<Vec<f64>> = (0..cfg.eval_samples).map(|_| eval_rng.normals(n)).collect();
    let mut opt_rng = root.derive("ftrl");

    let mut nu = DefaultDistribution::prior(cfg.states, cfg.actions, cfg.prior_var);
    let mut history = History::new(cfg.states, cfg.actions);
    let mut online = Vec::with_capacity(kmax);
    let mut iterates = Vec::with_capacity(kmax);
    let mut max_state_loss: f64 = 0.0;
    for (k, task) in tasks.iter().enumerate() {
        let l = loss_with_noise(&nu, task, cfg.epsilon, &noise)?;
        max_state_loss = max_state_loss.max(l.max_state_loss);
        online.push(l.mean);
        iterates.push(nu.clone());
        history.push(task)?;
        if k + 1 < kmax {
            nu = ftrl_update(&nu, &history, cfg, &mut opt_rng)?;
        }
    }

    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let hist = History::from_tasks(cfg.states, cfg.actions, &tasks[..k])?;
        let mut bary_rng = root.derive("barycenter").split(k as u64);
        let bary = barycenter(&iterates[k - 1], &hist, cfg, &mut bary_rng)?;
        let mut bary_loss = 0.0;
        for task in &tasks[..k] {
            let l = loss_with_noise(&bary, task, cfg.epsilon, &noise)?;
            max_state_loss = max_state_loss.max(l.max_state_loss);
            bary_loss += l.mean;
        }
        bary_loss /= k as f64;
        let online_loss = online[..k].iter().sum::<f64>() / k as f64;
        out.push(SeedRegret {
            k,
            seed,
            avg_regret: online_loss - bary_loss,
            online_loss,
            barycenter_loss: bary_loss,
            prior_kl: bary.prior_kl(cfg.prior_var),
        });
    }
    Ok((out, max_state_loss))
}

/// Average regret per `K` over seeds, with the log-log rate fit.
pub fn regret_experiment(cfg: &FtrlConfig, ks: &[usize], seeds: &[u64]) -> Result<RegretCurve> {
    cfg.validate()?;
    if ks.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("K grid and seed list must be nonempty".into()));
    }
    if ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("K grid must be positive and strictly ascending"));
    }
    let mut runs = Vec::new();
    let mut max_state_loss: f64 = 0.0;
    for &seed in seeds {
        let (r, m) = regret_for_seed(cfg, ks, seed)?;
        runs.extend(r);
        max_state_loss = max_state_loss.max(m);
    }
    let points: Vec<RegretPoint> = ks
        .iter()
        .map(|&k| {
            let v: Vec<f64> = runs.iter().filter(|r| r.k == k).map(|r| r.avg_regret).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            RegretPoint {
                k,
                mean,
                se: (var / n).sqrt(),
            }
        })
        .collect();
    let slope = if points.len() >= 2 && points.iter().all(|p| p.mean > 0.0) {
        let xs: Vec<f64> = points.iter().map(|p| (p.k as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
        least_squares_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(RegretCurve {
        runs,
        points,
        slope,
        max_state_loss,
    })
}
