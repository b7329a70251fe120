use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::ExperimentKind;
use crate::error::{Error, Result};
use crate::policy::{ForwardMode, GATE_SHARPNESS};

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    /// Entropy-regularised A2C.
    #[serde(rename = "PO")]
    Po,
    /// KL to a learned, unconstrained default policy.
    #[serde(rename = "RPO")]
    Rpo,
    /// Variational control policy with a weight prior, no default.
    #[serde(rename = "VDO-PO")]
    VdoPo,
    /// KL to a default that never sees the goal feature.
    #[serde(rename = "ManualIA")]
    ManualIa,
    /// KL to a variational-dropout default under the log-uniform prior.
    #[serde(rename = "MDLC", alias = "MDL-C")]
    Mdlc,
    /// KL to a learned default plus an entropy bonus.
    #[serde(rename = "DISTRAL")]
    Distral,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Po,
        MethodKind::Rpo,
        MethodKind::VdoPo,
        MethodKind::ManualIa,
        MethodKind::Mdlc,
        MethodKind::Distral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Po => "PO",
            MethodKind::Rpo => "RPO",
            MethodKind::VdoPo => "VDO-PO",
            MethodKind::ManualIa => "ManualIA",
            MethodKind::Mdlc => "MDLC",
            MethodKind::Distral => "DISTRAL",
        }
    }

    /// Whether the method keeps a distilled default policy.
    pub fn has_default(self) -> bool {
        matches!(
            self,
            MethodKind::Rpo | MethodKind::ManualIa | MethodKind::Mdlc | MethodKind::Distral
        )
    }

    pub fn default_is_variational(self) -> bool {
        self == MethodKind::Mdlc
    }

    pub fn control_is_variational(self) -> bool {
        self == MethodKind::VdoPo
    }

    /// The default only sees observations with the goal feature zeroed.
    pub fn hides_goal(self) -> bool {
        self == MethodKind::ManualIa
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '_'], "");
        Ok(match norm.as_str() {
            "PO" => MethodKind::Po,
            "RPO" => MethodKind::Rpo,
            "VDOPO" => MethodKind::VdoPo,
            "MANUALIA" => MethodKind::ManualIa,
            "MDLC" => MethodKind::Mdlc,
            "DISTRAL" => MethodKind::Distral,
            _ => {
                return Err(Error::config(format!(
                    "unknown method '{s}' (expected one of PO, RPO, VDO-PO, ManualIA, MDLC, DISTRAL)"
                )))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL[π_θ ‖ π_w]` in the control loss, stored-first in distillation.
    Forward,
    /// Arguments swapped in both places.
    Reverse,
}

/// How the weight-space KL is weighted against per-sample losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKlScaling {
    /// `β · KL` added to a mean per-sample loss as is.
    Raw,
    /// `β · KL / N` with `N` the size of the data the posterior explains
    /// (replay length for the default, phase steps for a variational control).
    PerSample,
}

/// Episodes and step caps of the two phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub experiment: ExperimentKind,
    pub episodes: [usize; 2],
    pub step_caps: [usize; 2],
}

impl Schedule {
    pub fn published(experiment: ExperimentKind) -> Self {
        match experiment {
            ExperimentKind::GoalGeneralization => Self {
                experiment,
                episodes: [20_000, 20_000],
                step_caps: [100, 25],
            },
            ExperimentKind::ContingencyChange => Self {
                experiment,
                episodes: [8_000, 8_000],
                step_caps: [100, 100],
            },
        }
    }

    /// Episode counts multiplied by `scale` (rounded, at least one).
    pub fn scaled(mut self, scale: f64) -> Self {
        for e in &mut self.episodes {
            *e = ((*e as f64 * scale).round() as usize).max(1);
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub method: MethodKind,
    /// Regulariser weight (entropy for PO, KL otherwise).
    pub alpha: f64,
    /// Weight on the variational weight KL.
    pub beta_vdo: f64,
    pub weight_kl_scaling: WeightKlScaling,
    /// Optional linear ramp of `beta_vdo` from 0 to full over this fraction
    /// window of each phase, e.g. `[0.7, 0.8]`.
    pub beta_ramp: Option<[f64; 2]>,
    pub lr: f64,
    pub gamma: f64,
    /// Minimum default-policy probability per action.
    pub epsilon: f64,
    pub kl_direction: KlDirection,
    /// Episodes with return at or above this feed the default replay.
    pub return_threshold: f64,
    pub value_coef: f64,
    /// Steps between control updates; `None` updates once per episode.
    pub rollout_len: Option<usize>,
    /// Entropy bonus weight for DISTRAL.
    pub entropy_coef: f64,
    /// Multiplier applied to environment rewards inside the learner.
    pub reward_scale: f64,
    pub hidden: usize,
    /// Whether the control policy carries an input gate (defaults always do).
    pub control_gate: bool,
    /// Gate slope `b` in `σ(b·κ)`.
    pub gate_sharpness: f64,
    pub replay_capacity: usize,
    pub distill_batch: usize,
    /// How the variational default is evaluated inside the control loss.
    pub default_mode: ForwardMode,
    pub gate_log_every: usize,
    pub schedule: Schedule,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            method: MethodKind::Mdlc,
            alpha: 0.1,
            beta_vdo: 1.0,
            weight_kl_scaling: WeightKlScaling::PerSample,
            beta_ramp: None,
            lr: 7e-4,
            gamma: 0.99,
            epsilon: 1e-3,
            kl_direction: KlDirection::Forward,
            return_threshold: 45.0,
            value_coef: 0.5,
            rollout_len: None,
            entropy_coef: 0.01,
            reward_scale: 1.0,
            hidden: 128,
            control_gate: true,
            gate_sharpness: GATE_SHARPNESS,
            replay_capacity: 50_000,
            distill_batch: 256,
            default_mode: ForwardMode::Sample,
            gate_log_every: 100,
            schedule: Schedule::published(ExperimentKind::GoalGeneralization),
        }
    }
}

impl AgentConfig {
    pub fn with_method(mut self, method: MethodKind) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha", self.alpha),
            ("beta_vdo", self.beta_vdo),
            ("epsilon", self.epsilon),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.epsilon > 0.25 {
            return Err(Error::config("epsilon must be <= 1/4"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.gate_sharpness > 0.0) || !self.gate_sharpness.is_finite() {
            return Err(Error::config("gate_sharpness must be > 0"));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::config("reward_scale must be > 0"));
        }
        if self.rollout_len == Some(0) {
            return Err(Error::config("rollout_len must be positive"));
        }
        if self.hidden == 0 || self.replay_capacity == 0 || self.distill_batch == 0 {
            return Err(Error::config("hidden, replay_capacity and distill_batch must be > 0"));
        }
        if let Some([a, b]) = self.beta_ramp {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
                return Err(Error::config("beta_ramp must satisfy 0 <= start <= end <= 1"));
            }
        }
        if self.schedule.step_caps.iter().any(|&c| c == 0) {
            return Err(Error::config("step caps must be positive"));
        }
        Ok(())
    }

    /// Effective `beta_vdo` at a given fraction of the phase.
    pub fn beta_at(&self, progress: f64) -> f64 {
        match self.beta_ramp {
            None => self.beta_vdo,
            Some([_, b]) if progress >= b => self.beta_vdo,
            Some([a, _]) if progress <= a => 0.0,
            Some([a, b]) => self.beta_vdo * (progress - a) / (b - a),
        }
    }
}
