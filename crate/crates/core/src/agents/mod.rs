//! Actor-critic agents, default-policy distillation and the sequential loop.

mod a2c;
mod config;
mod default;
mod learner;
mod regret;
mod run;

pub use a2c::{a2c_loss, discounted_returns, build_a2c_loss, collect_episode, rollout, teacher_forced, LossParts, Rollout, StepRecord, Trajectory};
pub use config::{AgentConfig, KlDirection, MethodKind, Schedule, WeightKlScaling};
pub use default::{default_distill_update, default_input, DefaultPolicy, DefaultReplay, DistillReport, DistillSettings};
pub use learner::{train_episode, EpisodeContext};
pub use regret::{cumulative_regret, EpisodeRow, RegretLedger};
pub use run::{control_arch, init_control, run_sequential, run_sequential_with, GateRecord, PhaseCheckpoint, RunEvent, RunOutput};

pub use crate::policy::epsilon_floor;
