//! Uncertainty sets of reward functions and the ways of collapsing them into
//! one training signal.
//!
//! An [`UncertaintySet`] holds candidate reward sources. A [`RewardSignal`]
//! pairs a nominal source with a set and an [`IntegrationStrategy`]:
//!
//! - `nominal_only`: the nominal reward
//! - `min` / `max` / `mean`: that statistic over the set
//! - `blend(λ)`: `λ · nominal + (1 - λ) · min(set)`
//!
//! The minimum is taken per `(prompt, response)` query. The KL penalty is not
//! part of the signal; PPO adds it once to whatever the signal returns.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::rewardnet::{train_stage1, BrmeModel, ScalarRewardModel, Stage1Config};
use crate::toyworld::{rm_matrix, PreferenceDataset, ToyWorld};

/// One candidate reward function over the `(prompt, response)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RewardSource {
    /// Precomputed value for every cell.
    Grid { id: String, values: Matrix },
    /// A fresh `N(mean, std²)` draw on every query.
    Gaussian { id: String, mean: f64, std: f64 },
    Constant { id: String, value: f64 },
    /// Another source passed through `(raw - mean) / std`.
    Normalized {
        inner: Box<RewardSource>,
        stats: SourceStats,
    },
}

impl RewardSource {
    /// Whether repeated queries of a cell always return the same value.
    pub fn is_deterministic(&self) -> bool {
        match self {
            RewardSource::Grid { .. } | RewardSource::Constant { .. } => true,
            RewardSource::Gaussian { .. } => false,
            RewardSource::Normalized { inner, .. } => inner.is_deterministic(),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            RewardSource::Grid { id, .. }
            | RewardSource::Gaussian { id, .. }
            | RewardSource::Constant { id, .. } => id,
            RewardSource::Normalized { inner, .. } => inner.id(),
        }
    }

    /// Scores one cell. Deterministic sources ignore `rng`.
    pub fn query(&self, prompt: usize, response: usize, rng: &mut Rng) -> f64 {
        match self {
            RewardSource::Grid { values, .. } => values.get(prompt, response),
            RewardSource::Gaussian { mean, std, .. } => mean + std * rng.normal(),
            RewardSource::Constant { value, .. } => *value,
            RewardSource::Normalized { inner, stats } => {
                normalize_reward(inner.query(prompt, response, rng), stats)
            }
        }
    }

    pub fn from_model(id: impl Into<String>, rm: &ScalarRewardModel, world: &ToyWorld) -> Result<Self> {
        Ok(RewardSource::Grid {
            id: id.into(),
            values: rm.matrix(world)?,
        })
    }

    pub fn golden(world: &ToyWorld) -> Self {
        RewardSource::Grid {
            id: "golden".into(),
            values: world.golden().clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    SeedEnsemble,
    BrmeHeads,
    SyntheticRandom,
    Constant,
    Heterologous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    pub kind: SetKind,
    pub sources: Vec<RewardSource>,
}

impl UncertaintySet {
    pub fn new(kind: SetKind, sources: Vec<RewardSource>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Empty("uncertainty set sources"));
        }
        Ok(Self { kind, sources })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Every member's score for one cell, in source order.
    pub fn query(&self, prompt: usize, response: usize, rng: &mut Rng) -> Vec<f64> {
        self.sources.iter().map(|s| s.query(prompt, response, rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    NominalOnly,
    Min,
    Max,
    Mean,
    Blend,
}

/// How nominal and member rewards combine. `lambda` is present exactly when
/// the mode is `blend`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrategyRepr", into = "StrategyRepr")]
pub struct IntegrationStrategy {
    mode: IntegrationMode,
    lambda: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyRepr {
    mode: IntegrationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

impl TryFrom<StrategyRepr> for IntegrationStrategy {
    type Error = Error;

    fn try_from(r: StrategyRepr) -> Result<Self> {
        match (r.mode, r.lambda) {
            (IntegrationMode::Blend, Some(l)) => Self::blend(l),
            (IntegrationMode::Blend, None) => Err(Error::Config("blend strategy needs lambda".into())),
            (mode, None) => Ok(Self { mode, lambda: None }),
            (mode, Some(_)) => Err(Error::Config(format!("lambda is only valid for blend, not {mode:?}"))),
        }
    }
}

impl From<IntegrationStrategy> for StrategyRepr {
    fn from(s: IntegrationStrategy) -> Self {
        Self {
            mode: s.mode,
            lambda: s.lambda,
        }
    }
}

impl IntegrationStrategy {
    pub const NOMINAL_ONLY: Self = Self { mode: IntegrationMode::NominalOnly, lambda: None };
    pub const MIN: Self = Self { mode: IntegrationMode::Min, lambda: None };
    pub const MAX: Self = Self { mode: IntegrationMode::Max, lambda: None };
    pub const MEAN: Self = Self { mode: IntegrationMode::Mean, lambda: None };

    pub fn blend(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Ok(Self {
            mode: IntegrationMode::Blend,
            lambda: Some(lambda),
        })
    }

    pub fn mode(&self) -> IntegrationMode {
        self.mode
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }
}

impl fmt::Display for IntegrationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.mode, self.lambda) {
            (IntegrationMode::Blend, Some(l)) => write!(f, "blend({l})"),
            (IntegrationMode::NominalOnly, _) => write!(f, "nominal_only"),
            (IntegrationMode::Min, _) => write!(f, "min"),
            (IntegrationMode::Max, _) => write!(f, "max"),
            (IntegrationMode::Mean, _) => write!(f, "mean"),
            (IntegrationMode::Blend, None) => write!(f, "blend(?)"),
        }
    }
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Collapses one cell's nominal and member rewards into a single value.
pub fn integrate(strategy: &IntegrationStrategy, nominal: f64, members: &[f64]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Empty("integrate members"));
    }
    ensure_finite(nominal, || "nominal reward".into())?;
    let value = match strategy.mode {
        IntegrationMode::NominalOnly => nominal,
        IntegrationMode::Min => min_of(members),
        IntegrationMode::Max => max_of(members),
        IntegrationMode::Mean => mean_of(members),
        IntegrationMode::Blend => {
            let lambda = strategy.lambda.expect("blend carries lambda");
            lambda * nominal + (1.0 - lambda) * min_of(members)
        }
    };
    ensure_finite(value, || format!("{strategy} integrated reward"))
}

/// The reward PPO optimizes: a nominal source, an uncertainty set, and the
/// rule combining them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub nominal: RewardSource,
    pub set: UncertaintySet,
    pub strategy: IntegrationStrategy,
}

/// Integrated value plus the member scores it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSample {
    pub value: f64,
    pub nominal: f64,
    pub members: Vec<f64>,
}

impl RewardSignal {
    pub fn new(nominal: RewardSource, set: UncertaintySet, strategy: IntegrationStrategy) -> Self {
        Self { nominal, set, strategy }
    }

    pub fn is_deterministic(&self) -> bool {
        self.nominal.is_deterministic() && self.set.sources.iter().all(RewardSource::is_deterministic)
    }

    /// Signal that only ever uses `source`.
    pub fn single(source: RewardSource) -> Self {
        let set = UncertaintySet {
            kind: SetKind::Constant,
            sources: vec![source.clone()],
        };
        Self::new(source, set, IntegrationStrategy::NOMINAL_ONLY)
    }

    /// Queries the nominal source and then every member, in that order,
    /// regardless of strategy, so the random stream consumed does not depend
    /// on the strategy.
    pub fn sample(&self, prompt: usize, response: usize, rng: &mut Rng) -> Result<SignalSample> {
        let nominal = self.nominal.query(prompt, response, rng);
        let members = self.set.query(prompt, response, rng);
        let value = integrate(&self.strategy, nominal, &members)?;
        Ok(SignalSample { value, nominal, members })
    }

    pub fn score(&self, prompt: usize, response: usize, rng: &mut Rng) -> Result<f64> {
        Ok(self.sample(prompt, response, rng)?.value)
    }

    /// Integrated values on every cell. Stochastic sources are drawn from a
    /// fixed stream, so the result is one realization.
    pub fn matrix(&self, world: &ToyWorld) -> Result<Matrix> {
        let mut rng = Rng::new(0);
        let k = world.k();
        let mut m = Matrix::zeros(k, k);
        for x in 0..k {
            for a in 0..k {
                m.set(x, a, self.score(x, a, &mut rng)?);
            }
        }
        Ok(m)
    }
}

/// `n_extra` stage-1 reward models trained on the same data with the same
/// configuration, each from its own seed derived from `master_seed`.
pub fn build_seed_ensemble(
    world: &ToyWorld,
    dataset: &PreferenceDataset,
    n_extra: usize,
    base_config: &Stage1Config,
    master_seed: u64,
) -> Result<(UncertaintySet, Vec<ScalarRewardModel>)> {
    if n_extra == 0 {
        return Err(Error::InvalidArgument("seed ensemble needs n_extra >= 1".into()));
    }
    let mut models = Vec::with_capacity(n_extra);
    let mut sources = Vec::with_capacity(n_extra);
    for i in 0..n_extra {
        let mut rng = Rng::derive(master_seed, &format!("ensemble-member-{i}"));
        let (rm, _) = train_stage1(world, dataset, base_config, &mut rng)?;
        sources.push(RewardSource::from_model(format!("rm_seed_{i}"), &rm, world)?);
        models.push(rm);
    }
    Ok((UncertaintySet::new(SetKind::SeedEnsemble, sources)?, models))
}

/// Nominal source (smallest-sigma head's mean per cell) and the set of head
/// means of a trained ensemble.
pub fn brme_sources(brme: &BrmeModel, world: &ToyWorld) -> Result<(RewardSource, UncertaintySet)> {
    let nominal = RewardSource::Grid {
        id: "brme_nominal".into(),
        values: rm_matrix(|x, a| brme.nominal(x, a), world)?,
    };
    let sources = (0..brme.n_heads())
        .map(|h| {
            Ok(RewardSource::Grid {
                id: format!("head_{h}"),
                values: rm_matrix(|x, a| brme.predict(x, a)[h].mu, world)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((nominal, UncertaintySet::new(SetKind::BrmeHeads, sources)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianRandom,
    ConstantZero,
}

/// `n` standard-normal sources or `n` zero sources.
pub fn make_synthetic_set(kind: SyntheticKind, n: usize) -> Result<UncertaintySet> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic set needs n >= 1".into()));
    }
    let sources = (0..n)
        .map(|i| match kind {
            SyntheticKind::GaussianRandom => RewardSource::Gaussian {
                id: format!("random_{i}"),
                mean: 0.0,
                std: 1.0,
            },
            SyntheticKind::ConstantZero => RewardSource::Constant {
                id: format!("zero_{i}"),
                value: 0.0,
            },
        })
        .collect();
    let set_kind = match kind {
        SyntheticKind::GaussianRandom => SetKind::SyntheticRandom,
        SyntheticKind::ConstantZero => SetKind::Constant,
    };
    UncertaintySet::new(set_kind, sources)
}

/// Per-source location and scale from a calibration probe set. `std` uses
/// the `n - 1` denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub source_id: String,
    pub mean: f64,
    pub std: f64,
    pub calibration_size: usize,
}

pub fn calibrate_values(source_id: &str, values: &[f64]) -> Result<SourceStats> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 2 probes, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = ensure_finite(var.sqrt(), || format!("std of source {source_id}"))?;
    if std == 0.0 {
        return Err(Error::DegenerateSource {
            source_id: source_id.to_string(),
        });
    }
    Ok(SourceStats {
        source_id: source_id.to_string(),
        mean,
        std,
        calibration_size: values.len(),
    })
}

/// Scores every probe with `source` and summarizes the scores.
pub fn calibrate_source(source: &RewardSource, probes: &[(usize, usize)], rng: &mut Rng) -> Result<SourceStats> {
    let values: Vec<f64> = probes.iter().map(|&(x, a)| source.query(x, a, rng)).collect();
    calibrate_values(source.id(), &values)
}

/// `(raw - mean) / std`.
pub fn normalize_reward(raw: f64, stats: &SourceStats) -> f64 {
    (raw - stats.mean) / stats.std
}

/// Inverse of [`normalize_reward`].
pub fn denormalize_reward(z: f64, stats: &SourceStats) -> f64 {
    z * stats.std + stats.mean
}

/// Calibrates every source on `probes` and wraps it in its normalization.
pub fn normalize_set(set: &UncertaintySet, probes: &[(usize, usize)], rng: &mut Rng) -> Result<(UncertaintySet, Vec<SourceStats>)> {
    let mut stats = Vec::with_capacity(set.len());
    let mut sources = Vec::with_capacity(set.len());
    for s in &set.sources {
        let st = calibrate_source(s, probes, rng)?;
        sources.push(RewardSource::Normalized {
            inner: Box::new(s.clone()),
            stats: st.clone(),
        });
        stats.push(st);
    }
    Ok((UncertaintySet::new(SetKind::Heterologous, sources)?, stats))
}

/// min / max / mean / sample std of a list of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("summary values"));
        }
        let n = values.len() as f64;
        let mean = mean_of(values);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            min: min_of(values),
            max: max_of(values),
            // guards the min ≤ mean ≤ max invariant against rounding
            mean: mean.clamp(min_of(values), max_of(values)),
            std,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRange {
    pub source_id: String,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Value ranges of each member and of the integrated signal over a probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRangeStats {
    pub strategy: String,
    pub per_source: Vec<SourceRange>,
    pub integrated: Summary,
    /// Fraction of probes where the member minimum lies below the member mean.
    pub under_scoring_fraction: f64,
}

#[derive(Serialize)]
struct RangeRow<'a> {
    source_id: &'a str,
    min: f64,
    max: f64,
    mean: f64,
    std: f64,
}

impl RewardRangeStats {
    /// CSV with header `source_id,min,max,mean,std`; the integrated signal
    /// is the last row, labelled `integrated`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let rows = self
            .per_source
            .iter()
            .map(|s| (s.source_id.as_str(), s.summary))
            .chain(std::iter::once(("integrated", self.integrated)));
        for (id, s) in rows {
            w.serialize(RangeRow {
                source_id: id,
                min: s.min,
                max: s.max,
                mean: s.mean,
                std: s.std,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Queries the signal on every probe and summarizes each member and the
/// integrated value.
pub fn range_stats(signal: &RewardSignal, probes: &[(usize, usize)], rng: &mut Rng) -> Result<RewardRangeStats> {
    if probes.is_empty() {
        return Err(Error::Empty("range_stats probes"));
    }
    let n_sources = signal.set.len();
    let mut per_source: Vec<Vec<f64>> = vec![Vec::with_capacity(probes.len()); n_sources];
    let mut integrated = Vec::with_capacity(probes.len());
    let mut under = 0usize;
    for &(x, a) in probes {
        let sample = signal.sample(x, a, rng)?;
        for (col, v) in per_source.iter_mut().zip(&sample.members) {
            col.push(*v);
        }
        if min_of(&sample.members) < mean_of(&sample.members) {
            under += 1;
        }
        integrated.push(sample.value);
    }
    let per_source = signal
        .set
        .sources
        .iter()
        .zip(&per_source)
        .map(|(s, values)| {
            Ok(SourceRange {
                source_id: s.id().to_string(),
                summary: Summary::of(values)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RewardRangeStats {
        strategy: signal.strategy.to_string(),
        per_source,
        integrated: Summary::of(&integrated)?,
        under_scoring_fraction: under as f64 / probes.len() as f64,
    })
}
