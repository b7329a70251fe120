//! Episode collection and the per-episode actor-critic loss.

use super::config::{AgentConfig, KlDirection, MethodKind};
use crate::autodiff::{RngStream, Tape, Tensor, Var};
use crate::env::{Cell, FourRooms, Observation, TaskSpec, GOAL_REWARD};
use crate::error::{Error, Result};
use crate::policy::{BoundPolicy, CategoricalDist, ForwardMode, PolicyParams, StepVars};

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    /// Control-policy distribution the action was drawn from.
    pub dist: CategoricalDist,
    pub value: f64,
    pub hit_wall: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub episode_return: f64,
    pub optimal_return: f64,
    pub start: Cell,
    pub goal: Cell,
    pub step_cap: usize,
    pub reached_goal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn wall_hits(&self) -> usize {
        self.steps.iter().filter(|s| s.hit_wall).count()
    }

    pub fn regret(&self) -> f64 {
        self.optimal_return - self.episode_return
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.steps.iter().map(|s| s.obs).collect()
    }

    /// Discounted return-to-go for every step.
    pub fn returns_to_go(&self, gamma: f64, reward_scale: f64) -> Vec<f64> {
        discounted_returns(&self.steps, 0.0, gamma, reward_scale)
    }
}

/// Return-to-go of each record, bootstrapped with `bootstrap` after the last.
pub fn discounted_returns(records: &[StepRecord], bootstrap: f64, gamma: f64, reward_scale: f64) -> Vec<f64> {
    let mut g = bootstrap;
    let mut out = vec![0.0; records.len()];
    for (t, s) in records.iter().enumerate().rev() {
        g = s.reward * reward_scale + gamma * g;
        out[t] = g;
    }
    out
}

/// An episode together with the tape that recorded the control policy's
/// forward passes, ready for [`build_a2c_loss`].
pub struct Rollout {
    pub trajectory: Trajectory,
    pub tape: Tape,
    pub bound: BoundPolicy,
    pub steps: Vec<StepVars>,
}

/// Plays one episode with actions sampled from `control`. The same `rng`
/// drives the reset, action draws and any weight noise.
pub fn rollout(
    env: &FourRooms,
    task: &TaskSpec,
    control: &PolicyParams,
    rng: &mut RngStream,
) -> Result<Rollout> {
    let (mut state, mut obs) = env.reset(task, rng)?;
    let start = state.agent;
    let goal = state.goal;
    let optimal_return = env.optimal_return(start, goal, task.step_cap)?;

    let mut tape = Tape::new();
    let bound = control.bind(&mut tape, ForwardMode::Sample);
    let mut steps = Vec::with_capacity(task.step_cap);
    let mut records = Vec::with_capacity(task.step_cap);
    let mut hidden = None;
    let mut total = 0.0;
    let mut reached_goal = false;

    while !state.done {
        let o = tape.constant(Tensor::vector(obs.to_vec()));
        let sv = bound.step(&mut tape, o, hidden, rng)?;
        let probs: Vec<f64> = tape.value(sv.log_probs).data().iter().map(|l| l.exp()).collect();
        let action = rng.categorical(&probs);
        let (next, next_obs, out) = env.step(&state, action)?;
        records.push(StepRecord {
            obs,
            action,
            reward: out.reward,
            dist: CategoricalDist::from_probs_unchecked(probs),
            value: tape.scalar(sv.value),
            hit_wall: out.hit_wall,
        });
        total += out.reward;
        reached_goal |= out.reached_goal;
        hidden = Some(sv.state);
        steps.push(sv);
        state = next;
        obs = next_obs;
    }

    Ok(Rollout {
        trajectory: Trajectory {
            steps: records,
            episode_return: total,
            optimal_return,
            start,
            goal,
            step_cap: task.step_cap,
            reached_goal,
        },
        tape,
        bound,
        steps,
    })
}

pub fn collect_episode(
    env: &FourRooms,
    task: &TaskSpec,
    control: &PolicyParams,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    rollout(env, task, control, rng).map(|r| r.trajectory)
}

/// Re-runs the control policy over a recorded trajectory on `tape`.
pub fn teacher_forced(
    tape: &mut Tape,
    bound: &BoundPolicy,
    traj: &Trajectory,
    rng: &mut RngStream,
) -> Result<Vec<StepVars>> {
    let mut hidden = None;
    let mut out = Vec::with_capacity(traj.len());
    for s in &traj.steps {
        let o = tape.constant(Tensor::vector(s.obs.to_vec()));
        let sv = bound.step(tape, o, hidden, rng)?;
        hidden = Some(sv.state);
        out.push(sv);
    }
    Ok(out)
}

/// Scalar parts of the episode loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    /// Entropy and/or KL regulariser, already multiplied by its weight.
    pub regularizer: f64,
    /// Weighted weight-space KL (variational control only).
    pub weight_kl: f64,
    pub total: f64,
}

/// Twice the largest discounted return magnitude any episode can reach.
pub fn value_limit(cfg: &AgentConfig) -> f64 {
    2.0 * cfg.reward_scale * (GOAL_REWARD + 1.0 / (1.0 - cfg.gamma))
}

/// Builds the loss of a run of consecutive steps on `tape`.
///
/// `bootstrap` is the value estimate after the last record (zero at episode
/// end). `defaults` holds one ε-floored default distribution per step for the
/// methods that regularise toward a default. `weight_kl` is the variational
/// control's summed weight KL with its coefficient.
#[allow(clippy::too_many_arguments)]
pub fn build_a2c_loss(
    tape: &mut Tape,
    steps: &[StepVars],
    records: &[StepRecord],
    bootstrap: f64,
    defaults: Option<&[CategoricalDist]>,
    weight_kl: Option<(Var, f64)>,
    cfg: &AgentConfig,
) -> Result<(Var, LossParts)> {
    if records.is_empty() || steps.len() != records.len() {
        return Err(Error::contract(format!(
            "a2c loss needs nonempty records with matching steps ({} vs {})",
            steps.len(),
            records.len()
        )));
    }
    let method = cfg.method;
    let needs_default = method.has_default() && cfg.alpha > 0.0;
    let defaults = match (needs_default, defaults) {
        (false, _) => None,
        (true, Some(d)) if d.len() == records.len() => Some(d),
        (true, Some(d)) => {
            return Err(Error::contract(format!(
                "{} default distributions for {} steps",
                d.len(),
                records.len()
            )))
        }
        (true, None) => return Err(Error::contract(format!("{method} needs default distributions"))),
    };
    let entropy_weight = match method {
        MethodKind::Po => cfg.alpha,
        MethodKind::Distral => cfg.entropy_coef,
        _ => 0.0,
    };

    let n = records.len() as f64;
    let returns = discounted_returns(records, bootstrap, cfg.gamma, cfg.reward_scale);
    let mut pg_terms = Vec::with_capacity(records.len());
    let mut v_terms = Vec::with_capacity(records.len());
    let mut reg_terms = Vec::new();

    let limit = value_limit(cfg);
    if let Some(v) = steps.iter().map(|s| tape.scalar(s.value)).find(|v| v.abs() > limit) {
        return Err(Error::numeric("a2c_loss", format!("value estimate {v} outside ±{limit}: critic diverged")));
    }

    for (t, (sv, rec)) in steps.iter().zip(records).enumerate() {
        let g = returns[t];
        let adv = g - tape.scalar(sv.value);
        let lp = tape.pick(sv.log_probs, rec.action);
        pg_terms.push(tape.scale(lp, -adv / n));

        let err = tape.offset(sv.value, -g);
        let sq = tape.square(err);
        v_terms.push(tape.scale(sq, cfg.value_coef / n));

        if entropy_weight > 0.0 || defaults.is_some() {
            let p = tape.exp(sv.log_probs);
            if entropy_weight > 0.0 {
                // Σ p log p = −H
                let neg_h = tape.dot(p, sv.log_probs);
                reg_terms.push(tape.scale(neg_h, entropy_weight / n));
            }
            if let Some(d) = defaults {
                let kl = kl_to_default(tape, p, sv.log_probs, &d[t], cfg.kl_direction)?;
                reg_terms.push(tape.scale(kl, cfg.alpha / n));
            }
        }
    }

    let pg = tape.add_n(&pg_terms);
    let vl = tape.add_n(&v_terms);
    let mut parts = vec![pg, vl];
    let mut out = LossParts {
        policy: tape.scalar(pg),
        value: tape.scalar(vl),
        ..Default::default()
    };
    if !reg_terms.is_empty() {
        let r = tape.add_n(&reg_terms);
        out.regularizer = tape.scalar(r);
        parts.push(r);
    }
    if let Some((kl, coef)) = weight_kl {
        if coef > 0.0 {
            let w = tape.scale(kl, coef);
            out.weight_kl = tape.scalar(w);
            parts.push(w);
        }
    }
    let total = tape.add_n(&parts);
    out.total = tape.scalar(total);
    if !out.total.is_finite() {
        return Err(Error::numeric("a2c_loss", format!("non-finite loss {out:?}")));
    }
    Ok((total, out))
}

/// KL between the control distribution (`p = exp(log_p)`) and a fixed
/// default `q`, in the configured direction.
fn kl_to_default(
    tape: &mut Tape,
    p: Var,
    log_p: Var,
    q: &CategoricalDist,
    direction: KlDirection,
) -> Result<Var> {
    let qs = q.probs();
    if qs.len() != tape.value(p).len() {
        return Err(Error::contract("default distribution has the wrong support size"));
    }
    match direction {
        KlDirection::Forward => {
            if let Some(i) = qs.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::numeric(
                    "a2c_loss",
                    format!("infinite KL: default assigns zero mass to action {i}"),
                ));
            }
            let log_q = tape.constant(Tensor::vector(qs.iter().map(|v| v.ln()).collect()));
            let diff = tape.sub(log_p, log_q);
            Ok(tape.dot(p, diff))
        }
        KlDirection::Reverse => {
            let q_log_q: f64 = qs.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
            let qv = tape.constant(Tensor::vector(qs.to_vec()));
            let cross = tape.dot(qv, log_p);
            let neg = tape.scale(cross, -1.0);
            Ok(tape.offset(neg, q_log_q))
        }
    }
}

/// Episode loss evaluated from scratch along a recorded trajectory.
pub fn a2c_loss(
    traj: &Trajectory,
    control: &PolicyParams,
    defaults: Option<&[CategoricalDist]>,
    weight_kl_coef: f64,
    cfg: &AgentConfig,
    rng: &mut RngStream,
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let bound = control.bind(&mut tape, ForwardMode::Sample);
    let steps = teacher_forced(&mut tape, &bound, traj, rng)?;
    let wkl = bound.weight_kl(&mut tape).map(|v| (v, weight_kl_coef));
    build_a2c_loss(&mut tape, &steps, &traj.steps, 0.0, defaults, wkl, cfg).map(|(_, p)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{greedy_action, ExperimentKind, GOAL_REWARD};
    use crate::policy::{kl_categorical, PolicyArch};

    fn small_control(seed: u64) -> PolicyParams {
        let arch = PolicyArch {
            hidden: 8,
            ..PolicyArch::default()
        };
        PolicyParams::init(&arch, &mut RngStream::new(seed))
    }

    fn single_step_traj(dist: CategoricalDist) -> Trajectory {
        let env = FourRooms::new();
        let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), 1);
        let (_, obs) = env.reset_at(&task, Cell::new(1, 1), Cell::new(1, 3));
        Trajectory {
            steps: vec![StepRecord {
                obs,
                action: 0,
                reward: 0.0,
                dist,
                value: 0.0,
                hit_wall: false,
            }],
            episode_return: 0.0,
            optimal_return: GOAL_REWARD,
            start: Cell::new(1, 1),
            goal: Cell::new(1, 3),
            step_cap: 100,
            reached_goal: false,
        }
    }

    #[test]
    fn trajectories_respect_the_cap_and_sum_rewards() {
        let env = FourRooms::new();
        let control = small_control(1);
        let mut rng = RngStream::new(2);
        for phase in [1, 2] {
            let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), phase);
            for _ in 0..30 {
                let t = collect_episode(&env, &task, &control, &mut rng).unwrap();
                assert!(t.len() <= task.step_cap && !t.is_empty());
                let s: f64 = t.steps.iter().map(|s| s.reward).sum();
                assert_eq!(s, t.episode_return);
                assert!(t.regret() <= t.optimal_return + task.step_cap as f64);
            }
        }
    }

    #[test]
    fn uniform_policy_baseline_matches_direct_simulation() {
        // A zero-weight head gives exactly uniform action probabilities, so
        // the collected returns must equal a hand-rolled uniform walk that
        // consumes the same random stream in the same order.
        let env = FourRooms::new();
        let mut control = small_control(3);
        for t in control.policy_head.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), 2);
        let mut a = RngStream::new(9);
        let mut b = RngStream::new(9);
        let mut total = 0.0;
        for _ in 0..100 {
            let t = collect_episode(&env, &task, &control, &mut a).unwrap();
            let (mut s, _) = env.reset(&task, &mut b).unwrap();
            let mut ret = 0.0;
            while !s.done {
                let act = b.categorical(&[0.25; 4]);
                let (n, _, o) = env.step(&s, act).unwrap();
                ret += o.reward;
                s = n;
            }
            assert_eq!(t.episode_return, ret);
            total += ret;
        }
        let mean = total / 100.0;
        assert!(mean.abs() < 15.0, "mean return {mean}");
    }

    #[test]
    fn greedy_oracle_reaches_reachable_goals() {
        let env = FourRooms::new();
        let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), 1);
        let mut rng = RngStream::new(4);
        for _ in 0..50 {
            let (mut s, _) = env.reset(&task, &mut rng).unwrap();
            let opt = env.optimal_return(s.agent, s.goal, task.step_cap).unwrap();
            let mut ret = 0.0;
            while !s.done {
                let a = greedy_action(env.map(), s.agent, s.goal).unwrap();
                let (n, _, o) = env.step(&s, a as usize).unwrap();
                ret += o.reward;
                s = n;
            }
            assert_eq!(ret, opt);
        }
    }

    #[test]
    fn returns_to_go_discount() {
        let mut t = single_step_traj(CategoricalDist::uniform(4));
        let mut r = t.steps[0].clone();
        r.reward = 50.0;
        t.steps.push(r);
        let g = t.returns_to_go(0.5, 1.0);
        assert_eq!(g, vec![25.0, 50.0]);
    }

    #[test]
    fn regulariser_is_kl_to_default() {
        let p = CategoricalDist::new(vec![0.97, 0.01, 0.01, 0.01]).unwrap();
        let q = CategoricalDist::uniform(4);
        let mut tape = Tape::new();
        let lp = tape.constant(Tensor::vector(p.probs().iter().map(|v| v.ln()).collect()));
        let pv = tape.exp(lp);
        let kl = kl_to_default(&mut tape, pv, lp, &q, KlDirection::Forward).unwrap();
        let oracle = kl_categorical(&p, &q).unwrap();
        assert!((tape.scalar(kl) - oracle).abs() < 1e-12);
        assert!((0.1 * tape.scalar(kl) - 0.1 * 1.2185).abs() < 1e-5);

        let rev = kl_to_default(&mut tape, pv, lp, &q, KlDirection::Reverse).unwrap();
        let oracle = kl_categorical(&q, &p).unwrap();
        assert!((tape.scalar(rev) - oracle).abs() < 1e-12);
    }

    #[test]
    fn rpo_with_default_equal_to_control_has_zero_regulariser() {
        let control = small_control(5);
        let env = FourRooms::new();
        let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), 2);
        let traj = collect_episode(&env, &task, &control, &mut RngStream::new(6)).unwrap();
        let defaults: Vec<_> = traj.steps.iter().map(|s| s.dist.clone()).collect();
        let cfg = AgentConfig::default().with_method(MethodKind::Rpo);
        let parts = a2c_loss(&traj, &control, Some(&defaults), 0.0, &cfg, &mut RngStream::new(0)).unwrap();
        assert!(parts.regularizer.abs() < 1e-12, "{parts:?}");
    }

    #[test]
    fn po_with_zero_alpha_is_plain_a2c() {
        let control = small_control(7);
        let traj = single_step_traj(CategoricalDist::uniform(4));
        let mut cfg = AgentConfig::default().with_method(MethodKind::Po);
        cfg.alpha = 0.0;
        let parts = a2c_loss(&traj, &control, None, 0.0, &cfg, &mut RngStream::new(0)).unwrap();
        assert_eq!(parts.regularizer, 0.0);
        assert_eq!(parts.total, parts.policy + parts.value);
    }

    #[test]
    fn missing_default_is_a_contract_error() {
        let control = small_control(8);
        let traj = single_step_traj(CategoricalDist::uniform(4));
        let cfg = AgentConfig::default().with_method(MethodKind::Mdlc);
        assert!(matches!(
            a2c_loss(&traj, &control, None, 0.0, &cfg, &mut RngStream::new(0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_mass_default_is_numeric_failure() {
        let control = small_control(8);
        let traj = single_step_traj(CategoricalDist::uniform(4));
        let cfg = AgentConfig::default().with_method(MethodKind::Rpo);
        let bad = [CategoricalDist::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap()];
        assert!(matches!(
            a2c_loss(&traj, &control, Some(&bad), 0.0, &cfg, &mut RngStream::new(0)),
            Err(Error::Numeric { .. })
        ));
    }
}
