//! Scenario configuration: JSON files, dotted-path overrides, seed lists.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::rewardnet::{Stage1Config, Stage2Config};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Standard,
    RobustToy,
    LambdaSweep,
    Minmax,
    Stochastic,
    AblationMean,
    Lemma1,
    Drift,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::Standard,
        ScenarioKind::RobustToy,
        ScenarioKind::LambdaSweep,
        ScenarioKind::Minmax,
        ScenarioKind::Stochastic,
        ScenarioKind::AblationMean,
        ScenarioKind::Lemma1,
        ScenarioKind::Drift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Standard => "standard",
            ScenarioKind::RobustToy => "robust_toy",
            ScenarioKind::LambdaSweep => "lambda_sweep",
            ScenarioKind::Minmax => "minmax",
            ScenarioKind::Stochastic => "stochastic",
            ScenarioKind::AblationMean => "ablation_mean",
            ScenarioKind::Lemma1 => "lemma1",
            ScenarioKind::Drift => "drift",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown scenario `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Which reward set the min/max/mean and ablation scenarios integrate over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintySource {
    /// `n_extra` stage-1 models trained from different seeds.
    SeedEnsemble,
    /// The Gaussian heads of a stage-2 model.
    Brme,
}

/// Golden-reward pre-run that produces the starting policy of the
/// stochastic scenario. A large `beta` keeps that policy correct but broad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStart {
    pub steps: usize,
    pub beta: f64,
}

impl Default for WarmStart {
    fn default() -> Self {
        Self { steps: 200, beta: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSettings {
    pub beta: f64,
    /// Added to one output logit of the reference policy.
    pub delta: f64,
    pub steps: usize,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self {
            beta: 0.1,
            delta: 1.0,
            steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    /// Number of prompts (and responses) in the toy world.
    pub k: usize,
    pub seeds: Vec<u64>,
    /// PPO steps per run (the long-horizon checkpoint).
    pub steps: usize,
    /// Step at which the short-horizon accuracy is read.
    pub short_steps: usize,
    /// Fraction of seeds a per-seed comparison must hold on.
    pub majority_fraction: f64,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub ppo: PpoConfig,
    /// Additional seed-varied reward models in the uncertainty set.
    pub n_extra: usize,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    pub uncertainty: UncertaintySource,
    /// Sources in the min-of-random arm of the stochastic scenario.
    pub n_sources: usize,
    pub warm_start: WarmStart,
    pub lemma_probes: usize,
    pub drift: DriftSettings,
    /// Upper bound on concurrently executing runs; 0 means one per core.
    pub jobs: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Standard,
            k: 8,
            seeds: (0..10).collect(),
            steps: 300,
            short_steps: 100,
            majority_fraction: 0.6,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            ppo: PpoConfig::default(),
            n_extra: 3,
            lambda: 0.4,
            lambdas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            uncertainty: UncertaintySource::SeedEnsemble,
            n_sources: 5,
            warm_start: WarmStart::default(),
            lemma_probes: 50,
            drift: DriftSettings::default(),
            jobs: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn for_scenario(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    /// Parses a JSON document; syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Minimum number of seeds a majority verdict needs.
    pub fn majority(&self) -> usize {
        ((self.majority_fraction * self.seeds.len() as f64).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.short_steps == 0 || self.short_steps > self.steps {
            return bad(format!("short_steps must lie in [1, steps], got {}", self.short_steps));
        }
        if !(self.majority_fraction > 0.0 && self.majority_fraction <= 1.0) {
            return bad(format!("majority_fraction must lie in (0, 1], got {}", self.majority_fraction));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.lambdas.is_empty() {
            return bad("lambdas must not be empty".into());
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return bad(format!("every lambdas entry must lie in [0, 1], got {l}"));
        }
        if self.n_extra == 0 || self.n_sources == 0 {
            return bad("n_extra and n_sources must be >= 1".into());
        }
        if self.lemma_probes == 0 {
            return bad("lemma_probes must be >= 1".into());
        }
        if !(self.warm_start.beta >= 0.0) || !(self.drift.beta >= 0.0) {
            return bad("warm_start.beta and drift.beta must be >= 0".into());
        }
        if self.stage2.brme.n_heads == 0 {
            return bad("stage2.brme.n_heads must be >= 1".into());
        }
        self.ppo.validate()
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the JSON
    /// form of the config and must already exist; values are parsed as JSON,
    /// falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, val) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{raw}` is not of the form key=value")))?;
            let parsed = serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
            set_path(&mut value, key.trim(), parsed)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(root: &mut Value, key: &str, new: Value) -> Result<()> {
    if key.is_empty() {
        return Err(Error::Config("empty override key".into()));
    }
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{}` is not an object", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown override key `{key}`")))?;
        if i + 1 == parts.len() {
            *slot = new;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("loop returns on the last segment")
}

/// Parses `"0,1,5"`, `"0..10"` (half-open) or a mix such as `"0..3,7"`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("invalid seed `{s}` in `{spec}`")))
        };
        match part.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo >= hi {
                    return Err(Error::Config(format!("empty seed range `{part}`")));
                }
                seeds.extend(lo..hi);
            }
            None => seeds.push(num(part)?),
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config(format!("no seeds in `{spec}`")));
    }
    Ok(seeds)
}
