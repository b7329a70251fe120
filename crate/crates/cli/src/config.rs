//! Run configuration: a flat JSON object of harness keys and agent keys.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use mdlc_core::agents::{AgentConfig, MethodKind, Schedule};
use mdlc_core::env::ExperimentKind;
use mdlc_core::{Error, Result};
use serde_json::{Map, Value};

/// Keys owned by the harness rather than the agent.
pub const HARNESS_KEYS: [&str; 8] = [
    "experiment",
    "methods",
    "seeds",
    "scale",
    "episodes",
    "step_caps",
    "parallelism",
    "method_overrides",
];

/// Agent fields that are set per cell or derived, so not exposed as keys.
const DERIVED_AGENT_KEYS: [&str; 2] = ["method", "schedule"];

pub const DEFAULT_SEED_COUNT: u64 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub methods: Vec<MethodKind>,
    pub seeds: Vec<u64>,
    /// Multiplies the per-phase episode counts.
    pub scale: f64,
    /// Unscaled per-phase episode counts; `None` uses the published ones.
    pub episodes: Option<[usize; 2]>,
    pub step_caps: Option<[usize; 2]>,
    pub parallelism: usize,
    /// Agent settings shared by every cell; `method` and `schedule` are
    /// overwritten per cell.
    pub agent: AgentConfig,
    /// Agent keys applied to one method's cells only, e.g.
    /// `{"MDLC": {"lr": 10}}`.
    pub method_overrides: BTreeMap<MethodKind, Map<String, Value>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::GoalGeneralization,
            methods: vec![MethodKind::Po, MethodKind::Rpo, MethodKind::VdoPo, MethodKind::ManualIa, MethodKind::Mdlc],
            seeds: (0..DEFAULT_SEED_COUNT).collect(),
            scale: 1.0,
            episodes: None,
            step_caps: None,
            parallelism: 1,
            agent: AgentConfig::default(),
            method_overrides: BTreeMap::new(),
        }
    }
}

pub fn agent_keys() -> Vec<String> {
    match serde_json::to_value(AgentConfig::default()) {
        Ok(Value::Object(m)) => m.keys().filter(|k| !DERIVED_AGENT_KEYS.contains(&k.as_str())).cloned().collect(),
        _ => unreachable!("agent config serialises to an object"),
    }
}

pub fn valid_keys() -> Vec<String> {
    let mut keys: Vec<String> = HARNESS_KEYS.iter().map(|s| s.to_string()).collect();
    keys.extend(agent_keys());
    keys
}

fn unknown_key(key: &str) -> Error {
    let nearest = valid_keys()
        .into_iter()
        .map(|k| (strsim::damerau_levenshtein(key, &k), k))
        .min();
    match nearest {
        Some((dist, k)) if dist <= 3 => Error::config(format!("unknown key '{key}' (did you mean '{k}'?)")),
        _ => Error::config(format!("unknown key '{key}'")),
    }
}

/// Parses `"0..4"` (inclusive), `"0..=4"`, or `"0,2,5"`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::config(format!("seeds: cannot parse '{text}'"));
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

pub fn parse_methods(text: &str) -> Result<Vec<MethodKind>> {
    text.split(',').map(|s| s.parse()).collect()
}

fn field<T: serde::de::DeserializeOwned>(key: &str, v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::config(format!("key '{key}': {e}")))
}

impl RunConfig {
    /// Builds a config from a JSON object, rejecting unknown keys.
    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::config("config must be a JSON object"))?;
        let agent_keys: BTreeSet<String> = agent_keys().into_iter().collect();
        for k in obj.keys() {
            if !HARNESS_KEYS.contains(&k.as_str()) && !agent_keys.contains(k) {
                return Err(unknown_key(k));
            }
        }
        let mut cfg = RunConfig::default();
        if let Some(v) = obj.get("experiment") {
            cfg.experiment = field("experiment", v)?;
        }
        if let Some(v) = obj.get("methods") {
            cfg.methods = match v {
                Value::String(s) => parse_methods(s)?,
                Value::Array(items) => items
                    .iter()
                    .map(|m| match m {
                        Value::String(s) => s.parse(),
                        _ => Err(Error::config("key 'methods': expected method names")),
                    })
                    .collect::<Result<_>>()?,
                _ => return Err(Error::config("key 'methods': expected a list or comma-separated string")),
            };
        }
        if let Some(v) = obj.get("seeds") {
            cfg.seeds = match v {
                Value::String(s) => parse_seeds(s)?,
                _ => field("seeds", v)?,
            };
        }
        if let Some(v) = obj.get("scale") {
            cfg.scale = field("scale", v)?;
        }
        if let Some(v) = obj.get("episodes") {
            cfg.episodes = field("episodes", v)?;
        }
        if let Some(v) = obj.get("step_caps") {
            cfg.step_caps = field("step_caps", v)?;
        }
        if let Some(v) = obj.get("parallelism") {
            cfg.parallelism = field("parallelism", v)?;
        }

        cfg.agent = with_agent_keys(&AgentConfig::default(), obj.iter().filter(|(k, _)| agent_keys.contains(*k)))?;
        cfg.agent.schedule = cfg.schedule();
        if let Some(v) = obj.get("method_overrides") {
            let groups = v
                .as_object()
                .ok_or_else(|| Error::config("key 'method_overrides': expected an object keyed by method"))?;
            for (name, keys) in groups {
                let method: MethodKind = name.parse()?;
                let keys = keys
                    .as_object()
                    .ok_or_else(|| Error::config(format!("key 'method_overrides.{name}': expected an object")))?;
                if let Some(k) = keys.keys().find(|k| !agent_keys.contains(*k)) {
                    return Err(unknown_key(k));
                }
                cfg.method_overrides.insert(method, keys.clone());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
        Self::from_value(&v)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `overrides` on top of `base` (both JSON objects) and parses.
    pub fn merged(base: &Value, overrides: &Map<String, Value>) -> Result<Self> {
        let mut obj = match base {
            Value::Object(m) => m.clone(),
            Value::Null => Map::new(),
            _ => return Err(Error::config("config must be a JSON object")),
        };
        for (k, v) in overrides {
            obj.insert(k.clone(), v.clone());
        }
        Self::from_value(&Value::Object(obj))
    }

    pub fn schedule(&self) -> Schedule {
        let mut s = Schedule::published(self.experiment);
        if let Some(e) = self.episodes {
            s.episodes = e;
        }
        if let Some(c) = self.step_caps {
            s.step_caps = c;
        }
        s.scaled(self.scale)
    }

    /// Agent configuration of one matrix cell.
    pub fn cell(&self, method: MethodKind) -> AgentConfig {
        self.try_cell(method).expect("overrides checked at parse time")
    }

    fn try_cell(&self, method: MethodKind) -> Result<AgentConfig> {
        let mut a = match self.method_overrides.get(&method) {
            Some(keys) => with_agent_keys(&self.agent, keys.iter())?,
            None => self.agent.clone(),
        };
        a.method = method;
        a.schedule = self.schedule();
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("key 'methods': at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("key 'seeds': at least one seed is required"));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::config(format!("key 'scale': must be > 0, got {}", self.scale)));
        }
        if self.parallelism == 0 {
            return Err(Error::config("key 'parallelism': must be >= 1"));
        }
        for &m in &self.methods {
            self.try_cell(m)?.validate()?;
        }
        Ok(())
    }

    /// Flat JSON form; `from_value(to_value(c)) == c`.
    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("experiment".into(), serde_json::to_value(self.experiment).expect("enum"));
        obj.insert("methods".into(), serde_json::to_value(&self.methods).expect("enum list"));
        obj.insert("seeds".into(), serde_json::to_value(&self.seeds).expect("ints"));
        obj.insert("scale".into(), self.scale.into());
        obj.insert("episodes".into(), serde_json::to_value(self.episodes).expect("ints"));
        obj.insert("step_caps".into(), serde_json::to_value(self.step_caps).expect("ints"));
        obj.insert("parallelism".into(), self.parallelism.into());
        if !self.method_overrides.is_empty() {
            let groups: Map<String, Value> = self
                .method_overrides
                .iter()
                .map(|(m, keys)| (m.name().to_string(), Value::Object(keys.clone())))
                .collect();
            obj.insert("method_overrides".into(), Value::Object(groups));
        }
        if let Ok(Value::Object(agent)) = serde_json::to_value(&self.agent) {
            for (k, v) in agent {
                if !DERIVED_AGENT_KEYS.contains(&k.as_str()) {
                    obj.insert(k, v);
                }
            }
        }
        Value::Object(obj)
    }
}

/// `base` with agent keys replaced, checking each key alone so a type error names it.
fn with_agent_keys<'a>(base: &AgentConfig, keys: impl Iterator<Item = (&'a String, &'a Value)>) -> Result<AgentConfig> {
    let mut agent = match serde_json::to_value(base) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("agent config serialises to an object"),
    };
    for (k, v) in keys {
        let mut probe = agent.clone();
        probe.insert(k.clone(), v.clone());
        serde_json::from_value::<AgentConfig>(Value::Object(probe)).map_err(|e| Error::config(format!("key '{k}': {e}")))?;
        agent.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(agent)).map_err(|e| Error::config(e.to_string()))
}

/// Parses a `--set key=value` flag; the value is JSON if it parses, else a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{s}' must look like key=value")))?;
    let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), v))
}
