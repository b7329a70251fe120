//! Gate → encoder → LSTM → {policy, value} heads.

use serde::{Deserialize, Serialize};

use super::dist::CategoricalDist;
use super::layers::{
    gate_forward, ForwardMode, GateLayer, Linear, LinearVars, LstmCell, LstmState, LstmVarState,
    LstmVars, GATE_SHARPNESS,
};
use crate::autodiff::{RngStream, Tape, Tensor, Var};
use crate::env::{Observation, N_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub obs_dim: usize,
    pub gate: bool,
    pub gate_sharpness: f64,
    pub encoder_widths: Vec<usize>,
    pub hidden: usize,
    pub actions: usize,
    /// Every dense layer carries a variational posterior.
    pub variational: bool,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self {
            obs_dim: OBS_DIM,
            gate: true,
            gate_sharpness: GATE_SHARPNESS,
            encoder_widths: Vec::new(),
            hidden: 128,
            actions: N_ACTIONS,
            variational: false,
        }
    }
}

impl PolicyArch {
    pub fn variational(mut self, v: bool) -> Self {
        self.variational = v;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub arch: PolicyArch,
    pub gate: Option<GateLayer>,
    pub encoder: Vec<Linear>,
    pub lstm: LstmCell,
    pub policy_head: Linear,
    pub value_head: Linear,
}

impl PolicyParams {
    pub fn init(arch: &PolicyArch, rng: &mut RngStream) -> Self {
        let v = arch.variational;
        let gate = arch.gate.then(|| GateLayer {
            sharpness: arch.gate_sharpness,
            ..GateLayer::new(arch.obs_dim)
        });
        let mut width = arch.obs_dim;
        let encoder = arch
            .encoder_widths
            .iter()
            .map(|&w| {
                let l = Linear::init(w, width, true, v, rng);
                width = w;
                l
            })
            .collect();
        let lstm = LstmCell::init(width, arch.hidden, v, rng);
        let policy_head = Linear::init(arch.actions, arch.hidden, true, v, rng);
        let value_head = Linear::init(1, arch.hidden, true, v, rng);
        Self {
            arch: arch.clone(),
            gate,
            encoder,
            lstm,
            policy_head,
            value_head,
        }
    }

    fn dense_layers(&self) -> Vec<(&Linear, String)> {
        let mut v: Vec<(&Linear, String)> = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, l)| (l, format!("encoder.{i}")))
            .collect();
        v.push((&self.lstm.input, "lstm.input".into()));
        v.push((&self.lstm.recurrent, "lstm.recurrent".into()));
        v.push((&self.policy_head, "policy_head".into()));
        v.push((&self.value_head, "value_head".into()));
        v
    }

    pub fn linears(&self) -> Vec<&Linear> {
        self.dense_layers().into_iter().map(|(l, _)| l).collect()
    }

    pub fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v: Vec<&mut Linear> = self.encoder.iter_mut().collect();
        v.push(&mut self.lstm.input);
        v.push(&mut self.lstm.recurrent);
        v.push(&mut self.policy_head);
        v.push(&mut self.value_head);
        v
    }

    /// All trainable tensors; the order defines tape keys and Adam slots.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.gate.iter().map(|g| &g.kappa).collect();
        for l in self.linears() {
            v.extend(l.tensors());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.gate.iter_mut().map(|g| &mut g.kappa).collect();
        let layers = self
            .encoder
            .iter_mut()
            .chain([
                &mut self.lstm.input,
                &mut self.lstm.recurrent,
                &mut self.policy_head,
                &mut self.value_head,
            ]);
        for l in layers {
            v.extend(l.tensors_mut());
        }
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.gate.iter().map(|_| "gate.kappa".to_string()).collect();
        for (l, name) in self.dense_layers() {
            v.extend(l.tensor_names(&name));
        }
        v
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.tensor_names()
            .into_iter()
            .zip(self.tensors().into_iter().cloned())
            .collect()
    }

    /// Overwrites every tensor from a named list (e.g. a checkpoint).
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let names = self.tensor_names();
        if names.len() != named.len() {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                names.len(),
                named.len()
            )));
        }
        for ((dst, want), (name, src)) in self.tensors_mut().into_iter().zip(&names).zip(named) {
            if want != name || dst.shape() != src.shape() {
                return Err(Error::contract(format!(
                    "tensor mismatch: expected {want} {:?}, got {name} {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn gate_values(&self) -> Option<Vec<f64>> {
        self.gate.as_ref().map(GateLayer::gate_values)
    }

    pub fn is_variational(&self) -> bool {
        self.arch.variational
    }

    /// Registers all tensors on `tape` (keys follow [`Self::tensors`]).
    pub fn bind(&self, tape: &mut Tape, mode: ForwardMode) -> BoundPolicy {
        let mut key = 0;
        let gate = self.gate.as_ref().map(|g| {
            let v = tape.param(key, g.kappa.clone());
            key += 1;
            (v, g.sharpness)
        });
        let encoder = self
            .encoder
            .iter()
            .map(|l| l.bind(tape, &mut key, mode))
            .collect();
        let lstm = self.lstm.bind(tape, &mut key, mode);
        let policy_head = self.policy_head.bind(tape, &mut key, mode);
        let value_head = self.value_head.bind(tape, &mut key, mode);
        BoundPolicy {
            gate,
            encoder,
            lstm,
            policy_head,
            value_head,
        }
    }

    /// Single step without keeping the tape.
    pub fn forward(
        &self,
        obs: &Observation,
        hidden: Option<&LstmState>,
        rng: &mut RngStream,
        mode: ForwardMode,
    ) -> Result<(CategoricalDist, f64, LstmState)> {
        policy_forward(self, obs, hidden, rng, mode)
    }
}

/// Tape handles for a bound [`PolicyParams`].
#[derive(Clone, Debug)]
pub struct BoundPolicy {
    gate: Option<(Var, f64)>,
    encoder: Vec<LinearVars>,
    lstm: LstmVars,
    policy_head: LinearVars,
    value_head: LinearVars,
}

#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub logits: Var,
    pub log_probs: Var,
    pub value: Var,
    pub state: LstmVarState,
}

impl BoundPolicy {
    pub fn step(
        &self,
        tape: &mut Tape,
        obs: Var,
        state: Option<LstmVarState>,
        rng: &mut RngStream,
    ) -> Result<StepVars> {
        let mut x = match self.gate {
            Some((kappa, b)) => gate_forward(tape, kappa, b, obs)?,
            None => obs,
        };
        for l in &self.encoder {
            let z = l.apply(tape, x, rng);
            x = tape.tanh(z);
        }
        let state = self.lstm.step(tape, x, state, rng);
        let logits = self.policy_head.apply(tape, state.h, rng);
        if !tape.value(logits).is_finite() {
            return Err(Error::numeric(
                "policy_forward",
                format!("non-finite logits {:?}", tape.value(logits).data()),
            ));
        }
        let log_probs = tape.log_softmax(logits);
        let v = self.value_head.apply(tape, state.h, rng);
        let value = tape.pick(v, 0);
        Ok(StepVars {
            logits,
            log_probs,
            value,
            state,
        })
    }

    /// Summed weight KL over variational layers; `None` when there are none.
    pub fn weight_kl(&self, tape: &mut Tape) -> Option<Var> {
        let parts: Vec<Var> = self
            .encoder
            .iter()
            .chain([
                &self.lstm.input,
                &self.lstm.recurrent,
                &self.policy_head,
                &self.value_head,
            ])
            .filter_map(|l| l.kl(tape))
            .collect();
        (!parts.is_empty()).then(|| tape.add_n(&parts))
    }
}

/// Softmax policy, value estimate and advanced hidden state for one observation.
pub fn policy_forward(
    params: &PolicyParams,
    obs: &Observation,
    hidden: Option<&LstmState>,
    rng: &mut RngStream,
    mode: ForwardMode,
) -> Result<(CategoricalDist, f64, LstmState)> {
    if let Some(h) = hidden {
        if h.h.len() != params.arch.hidden || h.c.len() != params.arch.hidden {
            return Err(Error::contract("hidden state size mismatch"));
        }
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, mode);
    let o = tape.constant(Tensor::vector(obs.to_vec()));
    let state = hidden.map(|s| LstmVarState {
        h: tape.constant(Tensor::vector(s.h.clone())),
        c: tape.constant(Tensor::vector(s.c.clone())),
    });
    let out = bound.step(&mut tape, o, state, rng)?;
    let probs = tape.value(out.log_probs).data().iter().map(|l| l.exp()).collect();
    let next = LstmState {
        h: tape.value(out.state.h).data().to_vec(),
        c: tape.value(out.state.c).data().to_vec(),
    };
    Ok((
        CategoricalDist::from_probs_unchecked(probs),
        tape.scalar(out.value),
        next,
    ))
}
