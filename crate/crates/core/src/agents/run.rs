//! Two-phase sequential training with a persistent default policy.

use serde::{Deserialize, Serialize};

use super::a2c::LossParts;
use super::config::{AgentConfig, WeightKlScaling};
use super::default::{DefaultPolicy, DistillReport};
use super::learner::{train_episode, EpisodeContext};
use super::regret::{EpisodeRow, RegretLedger};
use crate::autodiff::{AdamConfig, AdamState, RngStream, Tensor};
use crate::env::{FourRooms, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{PolicyArch, PolicyParams};

/// Gate values of the reported policy at one point in training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub phase: u8,
    pub episode: usize,
    pub gates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCheckpoint {
    pub phase: u8,
    pub control: Vec<(String, Tensor)>,
    pub default: Option<Vec<(String, Tensor)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub ledger: RegretLedger,
    pub gate_log: Vec<GateRecord>,
    pub checkpoints: Vec<PhaseCheckpoint>,
}

/// Progress notifications from [`run_sequential_with`].
pub enum RunEvent<'a> {
    PhaseStart {
        phase: u8,
        control: &'a PolicyParams,
        default: Option<&'a DefaultPolicy>,
    },
    Episode {
        phase: u8,
        row: &'a EpisodeRow,
        loss: &'a LossParts,
        distill: Option<&'a DistillReport>,
    },
    PhaseEnd {
        phase: u8,
        control: &'a PolicyParams,
        default: Option<&'a DefaultPolicy>,
    },
}

pub fn control_arch(cfg: &AgentConfig) -> PolicyArch {
    PolicyArch {
        hidden: cfg.hidden,
        gate: cfg.control_gate,
        gate_sharpness: cfg.gate_sharpness,
        ..PolicyArch::default()
    }
    .variational(cfg.method.control_is_variational())
}

/// Fresh control policy for `phase` from the run's seed schedule.
pub fn init_control(cfg: &AgentConfig, seed: u64, phase: u8) -> PolicyParams {
    let mut rng = RngStream::new(seed).derive("control-init").split(phase as u64);
    PolicyParams::init(&control_arch(cfg), &mut rng)
}

pub fn run_sequential(cfg: &AgentConfig, seed: u64) -> Result<RunOutput> {
    run_sequential_with(cfg, seed, |_| {})
}

pub fn run_sequential_with<F>(cfg: &AgentConfig, seed: u64, mut observe: F) -> Result<RunOutput>
where
    F: FnMut(RunEvent<'_>),
{
    cfg.validate()?;
    let env = FourRooms::new();
    let root = RngStream::new(seed);
    let tasks: Vec<TaskSpec> = [1u8, 2]
        .iter()
        .map(|&phase| {
            let t = TaskSpec::for_phase(cfg.schedule.experiment, env.map(), phase)
                .with_step_cap(cfg.schedule.step_caps[phase as usize - 1]);
            t.validate(env.map()).map(|_| t)
        })
        .collect::<Result<_>>()?;

    let mut default = DefaultPolicy::for_method(cfg, &mut root.derive("default-init"));
    let mut out = RunOutput {
        ledger: RegretLedger::new(),
        gate_log: Vec::new(),
        checkpoints: Vec::new(),
    };

    for (task, phase) in tasks.iter().zip([1u8, 2]) {
        let episodes = cfg.schedule.episodes[phase as usize - 1];
        let mut control = init_control(cfg, seed, phase);
        let init: Vec<Tensor> = control.tensors().into_iter().cloned().collect();
        let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &init);
        let mut episode_rng = root.derive("episodes").split(phase as u64);
        let mut eval_rng = root.derive("default-eval").split(phase as u64);
        let mut distill_rng = root.derive("distill").split(phase as u64);
        let mut phase_steps = 0usize;

        observe(RunEvent::PhaseStart {
            phase,
            control: &control,
            default: default.as_ref(),
        });

        for ep in 0..episodes {
            if cfg.gate_log_every > 0 && ep % cfg.gate_log_every == 0 {
                log_gates(&mut out.gate_log, phase, ep, &control, default.as_ref());
            }
            let progress = ep as f64 / episodes as f64;
            let beta = cfg.beta_at(progress);
            let coef = |steps: usize| match cfg.weight_kl_scaling {
                WeightKlScaling::Raw => beta,
                WeightKlScaling::PerSample => beta / steps.max(1) as f64,
            };
            let ctx = EpisodeContext {
                default: default.as_ref(),
                weight_kl_coef: &coef,
                steps_before: phase_steps,
            };
            let (traj, parts) = train_episode(
                &env,
                task,
                &mut control,
                &mut adam,
                cfg,
                &ctx,
                &mut episode_rng,
                &mut eval_rng,
            )?;
            phase_steps += traj.len();

            out.ledger.push(
                phase,
                ep,
                traj.episode_return,
                traj.optimal_return,
                traj.len(),
                traj.wall_hits(),
            );

            let mut report = None;
            if let Some(d) = default.as_mut() {
                if d.replay.harvest(&traj, cfg.return_threshold) {
                    d.settings.beta = beta;
                    report = d.update(&mut distill_rng)?;
                }
            }
            observe(RunEvent::Episode {
                phase,
                row: out.ledger.rows.last().expect("row just pushed"),
                loss: &parts,
                distill: report.as_ref(),
            });
        }
        log_gates(&mut out.gate_log, phase, episodes, &control, default.as_ref());
        out.checkpoints.push(PhaseCheckpoint {
            phase,
            control: control.named_tensors(),
            default: default.as_ref().map(|d| d.params.named_tensors()),
        });
        observe(RunEvent::PhaseEnd {
            phase,
            control: &control,
            default: default.as_ref(),
        });
    }
    if out.ledger.rows.iter().any(|r| !r.regret.is_finite()) {
        return Err(Error::numeric("run_sequential", "non-finite regret"));
    }
    Ok(out)
}

/// Records the default's gates, or the control's for methods without one.
fn log_gates(
    log: &mut Vec<GateRecord>,
    phase: u8,
    episode: usize,
    control: &PolicyParams,
    default: Option<&DefaultPolicy>,
) {
    let gates = match default {
        Some(d) => d.params.gate_values(),
        None => control.gate_values(),
    };
    if let Some(gates) = gates {
        log.push(GateRecord { phase, episode, gates });
    }
}
