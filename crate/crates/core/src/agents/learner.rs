//! On-policy training of the control policy, one episode at a time.

use super::a2c::{build_a2c_loss, LossParts, StepRecord, Trajectory};
use super::config::AgentConfig;
use super::default::DefaultPolicy;
use crate::autodiff::{AdamState, RngStream, Tape, Tensor};
use crate::env::{FourRooms, TaskSpec};
use crate::error::Result;
use crate::policy::{CategoricalDist, ForwardMode, LstmState, LstmVarState, PolicyParams};

/// What one training episode needs besides the control policy.
pub struct EpisodeContext<'a> {
    pub default: Option<&'a DefaultPolicy>,
    /// Coefficient on the variational control's weight KL given the number
    /// of environment steps seen so far in the phase.
    pub weight_kl_coef: &'a dyn Fn(usize) -> f64,
    pub steps_before: usize,
}

/// Plays one episode, updating `control` after every `cfg.rollout_len`
/// steps (or once at the end). The recurrent state is carried across updates
/// without gradient. Returns the trajectory and the summed loss parts.
#[allow(clippy::too_many_arguments)]
pub fn train_episode(
    env: &FourRooms,
    task: &TaskSpec,
    control: &mut PolicyParams,
    adam: &mut AdamState,
    cfg: &AgentConfig,
    ctx: &EpisodeContext<'_>,
    rng: &mut RngStream,
    eval_rng: &mut RngStream,
) -> Result<(Trajectory, LossParts)> {
    let (mut state, mut obs) = env.reset(task, rng)?;
    let start = state.agent;
    let goal = state.goal;
    let optimal_return = env.optimal_return(start, goal, task.step_cap)?;
    let seg_len = cfg.rollout_len.unwrap_or(usize::MAX).max(1);
    let n_params = control.tensors().len();

    let mut records: Vec<StepRecord> = Vec::with_capacity(task.step_cap);
    let mut hidden: Option<LstmState> = None;
    let mut total = 0.0;
    let mut reached_goal = false;
    let mut parts = LossParts::default();

    while !state.done {
        let mut tape = Tape::new();
        let bound = control.bind(&mut tape, ForwardMode::Sample);
        let mut hv = hidden.as_ref().map(|h| LstmVarState {
            h: tape.constant(Tensor::vector(h.h.clone())),
            c: tape.constant(Tensor::vector(h.c.clone())),
        });
        let seg_start = records.len();
        let mut steps = Vec::new();

        while !state.done && steps.len() < seg_len {
            let o = tape.constant(Tensor::vector(obs.to_vec()));
            let sv = bound.step(&mut tape, o, hv, rng)?;
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
            hv = Some(sv.state);
            steps.push(sv);
            state = next;
            obs = next_obs;
        }

        let last = hv.expect("segment has at least one step");
        let bootstrap = if state.done {
            0.0
        } else {
            let o = tape.constant(Tensor::vector(obs.to_vec()));
            let sv = bound.step(&mut tape, o, Some(last), rng)?;
            tape.scalar(sv.value)
        };
        let seg = &records[seg_start..];
        let defaults = match ctx.default {
            Some(d) if cfg.alpha > 0.0 => {
                let obs: Vec<_> = seg.iter().map(|r| r.obs).collect();
                Some(d.distributions(&obs, cfg.default_mode, eval_rng)?)
            }
            _ => None,
        };
        let weight_kl = bound
            .weight_kl(&mut tape)
            .map(|kl| (kl, (ctx.weight_kl_coef)(ctx.steps_before + records.len())));
        let (loss, p) = build_a2c_loss(&mut tape, &steps, seg, bootstrap, defaults.as_deref(), weight_kl, cfg)?;
        parts.policy += p.policy;
        parts.value += p.value;
        parts.regularizer += p.regularizer;
        parts.weight_kl += p.weight_kl;
        parts.total += p.total;

        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = (0..n_params)
            .map(|k| grads.get(k).cloned().expect("every parameter is on the tape"))
            .collect();
        adam.step(control.tensors_mut(), &grads)?;
        hidden = Some(LstmState {
            h: tape.value(last.h).data().to_vec(),
            c: tape.value(last.c).data().to_vec(),
        });
    }

    Ok((
        Trajectory {
            steps: records,
            episode_return: total,
            optimal_return,
            start,
            goal,
            step_cap: task.step_cap,
            reached_goal,
        },
        parts,
    ))
}
