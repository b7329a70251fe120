//! The distilled default policy and its replay.

use std::collections::VecDeque;

use super::a2c::Trajectory;
use super::config::{AgentConfig, KlDirection, WeightKlScaling};
use crate::autodiff::{AdamConfig, AdamState, RngStream, Tape, Tensor, Var};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::policy::{epsilon_floor, CategoricalDist, ForwardMode, PolicyArch, PolicyParams};

/// Bounded FIFO of `(observation, control distribution)` pairs.
#[derive(Clone, Debug)]
pub struct DefaultReplay {
    capacity: usize,
    items: VecDeque<(Observation, CategoricalDist)>,
}

impl DefaultReplay {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, obs: Observation, dist: CategoricalDist) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((obs, dist));
    }

    /// Adds every step of `traj` when its return reaches `threshold`.
    pub fn harvest(&mut self, traj: &Trajectory, threshold: f64) -> bool {
        if traj.episode_return < threshold {
            return false;
        }
        for s in &traj.steps {
            self.push(s.obs, s.dist.clone());
        }
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Observation, CategoricalDist)> {
        self.items.iter()
    }

    /// `n` uniform draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Vec<&(Observation, CategoricalDist)> {
        (0..n).map(|_| &self.items[rng.below(self.items.len())]).collect()
    }
}

/// Knobs of one distillation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillSettings {
    pub epsilon: f64,
    pub beta: f64,
    pub scaling: WeightKlScaling,
    pub direction: KlDirection,
    pub batch: usize,
    pub hides_goal: bool,
}

impl DistillSettings {
    pub fn from_config(cfg: &AgentConfig) -> Self {
        Self {
            epsilon: cfg.epsilon,
            beta: cfg.beta_vdo,
            scaling: cfg.weight_kl_scaling,
            direction: cfg.kl_direction,
            batch: cfg.distill_batch,
            hides_goal: cfg.method.hides_goal(),
        }
    }
}

/// Loss decomposition of one distillation step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistillReport {
    /// Mean categorical KL over the batch, nats.
    pub distill: f64,
    /// Raw summed weight KL, nats (zero for a plain default).
    pub weight_kl: f64,
    /// The weight-KL term as it enters the loss.
    pub weighted_kl: f64,
    pub total: f64,
}

/// Input seen by a default: ManualIA's never includes the goal feature.
pub fn default_input(obs: &Observation, hides_goal: bool) -> Observation {
    if hides_goal {
        obs.without_goal()
    } else {
        *obs
    }
}

/// `ln((1 − nε)·softmax + ε)` on the tape.
fn floored_log_probs(tape: &mut Tape, log_probs: Var, epsilon: f64) -> Var {
    let n = tape.value(log_probs).len() as f64;
    let p = tape.exp(log_probs);
    let mixed = tape.scale(p, 1.0 - n * epsilon);
    let floored = tape.offset(mixed, epsilon);
    tape.ln(floored)
}

/// One gradient step on the variational code of the default. Returns `None`
/// when the replay is empty.
pub fn default_distill_update(
    replay: &DefaultReplay,
    params: &mut PolicyParams,
    adam: &mut AdamState,
    settings: &DistillSettings,
    rng: &mut RngStream,
) -> Result<Option<DistillReport>> {
    if replay.is_empty() {
        return Ok(None);
    }
    if settings.batch == 0 {
        return Err(Error::contract("distillation batch must be positive"));
    }
    let batch = replay.sample(settings.batch, rng);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, ForwardMode::Sample);

    let mut terms = Vec::with_capacity(batch.len());
    for &(ref obs, ref stored) in batch {
        let input = default_input(obs, settings.hides_goal);
        let o = tape.constant(Tensor::vector(input.to_vec()));
        let sv = bound.step(&mut tape, o, None, rng)?;
        let log_q = floored_log_probs(&mut tape, sv.log_probs, settings.epsilon);
        let kl = match settings.direction {
            KlDirection::Forward => {
                let p = stored.probs();
                let p_log_p: f64 = p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
                let pv = tape.constant(Tensor::vector(p.to_vec()));
                let cross = tape.dot(pv, log_q);
                let neg = tape.scale(cross, -1.0);
                tape.offset(neg, p_log_p)
            }
            KlDirection::Reverse => {
                let log_p: Vec<f64> = stored.probs().iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
                let lp = tape.constant(Tensor::vector(log_p));
                let q = tape.exp(log_q);
                let diff = tape.sub(log_q, lp);
                tape.dot(q, diff)
            }
        };
        terms.push(kl);
    }
    let sum = tape.add_n(&terms);
    let distill = tape.scale(sum, 1.0 / terms.len() as f64);

    let mut report = DistillReport {
        distill: tape.scalar(distill),
        ..Default::default()
    };
    let mut loss = distill;
    if let Some(kl) = bound.weight_kl(&mut tape) {
        report.weight_kl = tape.scalar(kl);
        let coef = match settings.scaling {
            WeightKlScaling::Raw => settings.beta,
            WeightKlScaling::PerSample => settings.beta / replay.len() as f64,
        };
        if coef > 0.0 {
            let w = tape.scale(kl, coef);
            report.weighted_kl = tape.scalar(w);
            loss = tape.add(distill, w);
        }
    }
    report.total = tape.scalar(loss);
    if !report.total.is_finite() {
        return Err(Error::numeric("default_distill_update", format!("non-finite loss {report:?}")));
    }
    let grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = (0..params.tensors().len())
        .map(|k| grads.get(k).cloned().expect("every parameter is on the tape"))
        .collect();
    adam.step(params.tensors_mut(), &grads)?;
    Ok(Some(report))
}

/// A default policy with its optimiser and replay.
#[derive(Clone, Debug)]
pub struct DefaultPolicy {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub replay: DefaultReplay,
    pub settings: DistillSettings,
}

impl DefaultPolicy {
    /// `None` for methods without a default.
    pub fn for_method(cfg: &AgentConfig, rng: &mut RngStream) -> Option<Self> {
        if !cfg.method.has_default() {
            return None;
        }
        let arch = PolicyArch {
            hidden: cfg.hidden,
            gate_sharpness: cfg.gate_sharpness,
            ..PolicyArch::default()
        }
        .variational(cfg.method.default_is_variational());
        let params = PolicyParams::init(&arch, rng);
        let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        Some(Self {
            adam: AdamState::new(AdamConfig::with_lr(cfg.lr), &tensors),
            params,
            replay: DefaultReplay::new(cfg.replay_capacity),
            settings: DistillSettings::from_config(cfg),
        })
    }

    /// ε-floored default distribution for each observation, evaluated from
    /// the zero recurrent state.
    pub fn distributions(
        &self,
        obs: &[Observation],
        mode: ForwardMode,
        rng: &mut RngStream,
    ) -> Result<Vec<CategoricalDist>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, mode);
        obs.iter()
            .map(|o| {
                let input = default_input(o, self.settings.hides_goal);
                let x = tape.constant(Tensor::vector(input.to_vec()));
                let sv = bound.step(&mut tape, x, None, rng)?;
                let probs = CategoricalDist::from_logits(tape.value(sv.logits).data())?;
                epsilon_floor(&probs, self.settings.epsilon)
            })
            .collect()
    }

    pub fn update(&mut self, rng: &mut RngStream) -> Result<Option<DistillReport>> {
        default_distill_update(&self.replay, &mut self.params, &mut self.adam, &self.settings, rng)
    }
}
