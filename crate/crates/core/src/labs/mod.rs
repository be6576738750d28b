//! Named, reproducible experiment scenarios.
//!
//! A scenario fixes a set of arms (reward signals plus PPO settings), runs
//! each arm on every configured seed, and checks a list of verdicts on the
//! results. All arms of a scenario share the seed list, and for a given seed
//! they share the world, dataset, reward models, initial policy and PPO
//! sampling stream; they differ only in the reward signal.
//!
//! Verdicts that reproduce a published claim are flagged `claim`;
//! the rest are sanity checks or informational extensions.

pub mod artifacts;
pub mod config;
mod scenarios;
pub mod svg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::ppo::RunRecord;
use crate::rewardnet::ScalarRewardModel;

pub use config::{parse_seeds, DriftSettings, ScenarioConfig, ScenarioKind, UncertaintySource, WarmStart};
pub use scenarios::run_scenario;

/// Per-seed summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub short_accuracy: f64,
    /// Sample std of accuracy over the last third of training.
    pub stability: f64,
    /// `initial_accuracy - final_accuracy`.
    pub degradation: f64,
    /// Mean over steps of the batch std of the integrated reward.
    pub reward_std: f64,
    pub final_kl: f64,
    /// Row-argmax accuracy of the reward matrix, for deterministic signals.
    pub reward_accuracy: Option<f64>,
}

impl SeedResult {
    pub fn from_record(record: &RunRecord, short_steps: usize, reward_accuracy: Option<f64>) -> Self {
        let n = record.steps.len();
        let tail: Vec<f64> = record.steps[n - (n / 3).max(1).min(n)..].iter().map(|s| s.accuracy).collect();
        let mean_std = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            if v.len() < 2 {
                0.0
            } else {
                (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            }
        };
        Self {
            seed: record.seed,
            initial_accuracy: record.initial_accuracy,
            final_accuracy: record.final_accuracy(),
            short_accuracy: record.accuracy_at(short_steps).unwrap_or_else(|| record.final_accuracy()),
            stability: mean_std(&tail),
            degradation: record.initial_accuracy - record.final_accuracy(),
            reward_std: record.steps.iter().map(|s| s.reward_std).sum::<f64>() / n.max(1) as f64,
            final_kl: record.final_kl(),
            reward_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub description: String,
    /// Whether this arm reproduces a published configuration.
    pub claim: bool,
    pub per_seed: Vec<SeedResult>,
    pub mean_final: f64,
    pub std_final: f64,
    pub mean_short: f64,
}

impl ArmReport {
    pub fn new(name: impl Into<String>, description: impl Into<String>, claim: bool, per_seed: Vec<SeedResult>) -> Self {
        let finals: Vec<f64> = per_seed.iter().map(|s| s.final_accuracy).collect();
        let n = finals.len().max(1) as f64;
        let mean_final = finals.iter().sum::<f64>() / n;
        let std_final = if finals.len() > 1 {
            (finals.iter().map(|a| (a - mean_final).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            name: name.into(),
            description: description.into(),
            claim,
            mean_short: per_seed.iter().map(|s| s.short_accuracy).sum::<f64>() / n,
            per_seed,
            mean_final,
            std_final,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.per_seed.iter().map(|s| s.seed).collect()
    }

    /// Median of the per-seed final accuracies (mean of the middle two for
    /// an even count).
    pub fn median_final(&self) -> f64 {
        let mut v: Vec<f64> = self.per_seed.iter().map(|s| s.final_accuracy).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// One checked assertion with the numbers it was decided on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub claim: bool,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, claim: bool, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            claim,
            passed,
            measured: BTreeMap::new(),
            detail: detail.into(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.measured.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Probe {
    pub c: f64,
    pub gamma: f64,
    pub seed: u64,
    pub q_value: f64,
    pub advantage_max_abs: f64,
    pub grad_norm: f64,
    pub bellman_residual: f64,
}

/// A matrix worth drawing or reloading: a reward grid or a final policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Run {
        arm: String,
        seed: u64,
        reward_matrix: Option<Matrix>,
        policy_matrix: Matrix,
    },
    RewardModel {
        seed: u64,
        model: ScalarRewardModel,
    },
}

impl Checkpoint {
    pub fn file_stem(&self) -> String {
        match self {
            Checkpoint::Run { arm, seed, .. } => format!("{arm}_seed{seed}"),
            Checkpoint::RewardModel { seed, .. } => format!("reward_model_seed{seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmReport>,
    pub verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lemma1_probes: Vec<Lemma1Probe>,
    /// Full training traces keyed by `(arm, seed)`, in arm then seed order.
    #[serde(skip)]
    pub runs: Vec<(String, RunRecord)>,
    #[serde(skip)]
    pub checkpoints: Vec<Checkpoint>,
}

impl ScenarioReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    /// True when every verdict flagged as a published claim passed.
    pub fn claims_pass(&self) -> bool {
        self.verdicts.iter().filter(|v| v.claim).all(|v| v.passed)
    }

    pub fn failing_claims(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| v.claim && !v.passed).collect()
    }

    /// Metrics CSV of one run, if present.
    pub fn csv(&self, arm: &str, seed: u64) -> Option<Result<String>> {
        self.runs
            .iter()
            .find(|(a, r)| a == arm && r.seed == seed)
            .map(|(_, r)| r.to_csv())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    FinalAccuracy,
    ShortAccuracy,
    Stability,
    Degradation,
    RewardStd,
}

impl Metric {
    pub fn of(self, s: &SeedResult) -> f64 {
        match self {
            Metric::FinalAccuracy => s.final_accuracy,
            Metric::ShortAccuracy => s.short_accuracy,
            Metric::Stability => s.stability,
            Metric::Degradation => s.degradation,
            Metric::RewardStd => s.reward_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Favored {
    A,
    B,
    Tie,
}

/// Paired per-seed comparison of one metric between two arms. "Wins" means
/// a strictly larger metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arm_a: String,
    pub arm_b: String,
    pub metric: Metric,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// Mean over seeds of `metric(b) - metric(a)`.
    pub mean_difference: f64,
    pub favored: Favored,
}

/// Compares two arms seed by seed. Both arms must cover exactly the same
/// seeds.
pub fn compare_arms(report: &ScenarioReport, arm_a: &str, arm_b: &str, metric: Metric) -> Result<Comparison> {
    let find = |name: &str| {
        report
            .arm(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no arm named `{name}` in {} report", report.scenario)))
    };
    compare_arm_reports(find(arm_a)?, find(arm_b)?, metric)
}

pub fn compare_arm_reports(a: &ArmReport, b: &ArmReport, metric: Metric) -> Result<Comparison> {
    let (mut sa, mut sb) = (a.seeds(), b.seeds());
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb || sa.is_empty() {
        return Err(Error::UnmatchedSeeds {
            arm_a: a.name.clone(),
            arm_b: b.name.clone(),
        });
    }
    let (mut wins_a, mut wins_b, mut ties, mut diff) = (0, 0, 0, 0.0);
    for ra in &a.per_seed {
        let rb = b.per_seed.iter().find(|r| r.seed == ra.seed).expect("seed sets match");
        let (va, vb) = (metric.of(ra), metric.of(rb));
        diff += vb - va;
        match va.partial_cmp(&vb) {
            Some(std::cmp::Ordering::Greater) => wins_a += 1,
            Some(std::cmp::Ordering::Less) => wins_b += 1,
            _ => ties += 1,
        }
    }
    let favored = match wins_a.cmp(&wins_b) {
        std::cmp::Ordering::Greater => Favored::A,
        std::cmp::Ordering::Less => Favored::B,
        std::cmp::Ordering::Equal => Favored::Tie,
    };
    Ok(Comparison {
        arm_a: a.name.clone(),
        arm_b: b.name.clone(),
        metric,
        wins_a,
        wins_b,
        ties,
        mean_difference: diff / sa.len() as f64,
        favored,
    })
}

/// Human-readable summary: one row per arm, then one line per verdict.
pub fn render_report(report: &ScenarioReport) -> String {
    let mut out = format!("scenario: {}\nseeds: {:?}\n\n", report.scenario, report.seeds);
    if !report.lemma1_probes.is_empty() {
        out.push_str(&format!(
            "{:>4} {:>9} {:>6} {:>14} {:>18} {:>12}\n",
            "#", "c", "gamma", "q_value", "advantage_max_abs", "grad_norm"
        ));
        for (i, p) in report.lemma1_probes.iter().enumerate() {
            out.push_str(&format!(
                "{:>4} {:>9.4} {:>6.3} {:>14.6} {:>18.3e} {:>12.3e}\n",
                i, p.c, p.gamma, p.q_value, p.advantage_max_abs, p.grad_norm
            ));
        }
        out.push('\n');
    }
    if !report.arms.is_empty() {
        let width = report.arms.iter().map(|a| a.name.len()).max().unwrap_or(3).max(3);
        out.push_str(&format!(
            "{:<width$}  {:>5}  {:>10}  {:>9}  {:>10}  {:>9}  {:>11}  {:>10}\n",
            "arm", "claim", "short_acc", "final_acc", "std_final", "stability", "degradation", "reward_std"
        ));
        for arm in &report.arms {
            let n = arm.per_seed.len().max(1) as f64;
            let avg = |f: fn(&SeedResult) -> f64| arm.per_seed.iter().map(f).sum::<f64>() / n;
            out.push_str(&format!(
                "{:<width$}  {:>5}  {:>10.4}  {:>9.4}  {:>10.4}  {:>9.4}  {:>11.4}  {:>10.4}\n",
                arm.name,
                if arm.claim { "yes" } else { "no" },
                arm.mean_short,
                arm.mean_final,
                arm.std_final,
                avg(|s| s.stability),
                avg(|s| s.degradation),
                avg(|s| s.reward_std),
            ));
        }
        out.push('\n');
    }
    for v in &report.verdicts {
        let measured: Vec<String> = v.measured.iter().map(|(k, x)| format!("{k}={x:.6}")).collect();
        out.push_str(&format!(
            "{} {}{} — {} [{}]\n",
            if v.passed { "PASS" } else { "FAIL" },
            v.name,
            if v.claim { " (claim)" } else { "" },
            v.detail,
            measured.join(", ")
        ));
    }
    out
}
