//! On-disk layout of a completed run.
//!
//! ```text
//! <out>/manifest.json             config, seeds, arms, code version, wall time
//! <out>/report.json               arms and verdicts (no traces)
//! <out>/verdicts.json
//! <out>/metrics/<arm>/<seed>.csv  per-step training metrics
//! <out>/metrics/lemma1/probes.csv (lemma1 only)
//! <out>/figures/*.svg
//! <out>/checkpoints/*.json
//! ```
//!
//! Everything is first written to a sibling staging directory and renamed
//! into place at the end, so a failed run never leaves a partial `<out>`.
//! Apart from `manifest.json` (wall time, code version) every file is a
//! deterministic function of the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::svg;
use super::{Checkpoint, ScenarioConfig, ScenarioReport};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
pub const VERDICTS: &str = "verdicts.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub seeds: Vec<u64>,
    pub arms: Vec<String>,
    /// `git describe --always --dirty` of the working tree, when available.
    pub code_version: Option<String>,
    pub wall_time_seconds: f64,
    pub claims_pass: bool,
    /// Paths relative to the run directory, sorted.
    pub files: Vec<String>,
}

fn code_version() -> Option<String> {
    let out = Command::new("git").args(["describe", "--always", "--dirty"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

struct Staging {
    root: PathBuf,
    files: Vec<String>,
}

impl Staging {
    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

fn lemma1_csv(report: &ScenarioReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &report.lemma1_probes {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Mean accuracy per step over the seeds of each arm.
fn accuracy_series(report: &ScenarioReport) -> Vec<(String, Vec<f64>)> {
    report
        .arms
        .iter()
        .map(|arm| {
            let traces: Vec<_> = report.runs.iter().filter(|(a, _)| *a == arm.name).map(|(_, r)| r).collect();
            let len = traces.iter().map(|r| r.steps.len()).min().unwrap_or(0);
            let mean = (0..len)
                .map(|i| traces.iter().map(|r| r.steps[i].accuracy).sum::<f64>() / traces.len() as f64)
                .collect();
            (arm.name.clone(), mean)
        })
        .collect()
}

fn reward_ranges(report: &ScenarioReport) -> Vec<(String, f64, f64, f64)> {
    report
        .arms
        .iter()
        .filter_map(|arm| {
            let steps: Vec<_> = report
                .runs
                .iter()
                .filter(|(a, _)| *a == arm.name)
                .flat_map(|(_, r)| r.steps.iter())
                .collect();
            if steps.is_empty() {
                return None;
            }
            let min = steps.iter().map(|s| s.reward_min).fold(f64::INFINITY, f64::min);
            let max = steps.iter().map(|s| s.reward_max).fold(f64::NEG_INFINITY, f64::max);
            let mean = steps.iter().map(|s| s.mean_reward).sum::<f64>() / steps.len() as f64;
            Some((arm.name.clone(), min, max, mean))
        })
        .collect()
}

fn stage(report: &ScenarioReport, staging: &mut Staging) -> Result<()> {
    staging.json(REPORT, report)?;
    staging.json(VERDICTS, &report.verdicts)?;
    for (arm, record) in &report.runs {
        staging.write(&format!("metrics/{}/{}.csv", sanitize(arm), record.seed), record.to_csv()?.as_bytes())?;
    }
    if !report.lemma1_probes.is_empty() {
        staging.write("metrics/lemma1/probes.csv", lemma1_csv(report)?.as_bytes())?;
    }
    if !report.runs.is_empty() {
        let title = format!("{}: mean accuracy per step", report.scenario);
        staging.write("figures/accuracy.svg", svg::line_chart(&title, &accuracy_series(report), 0.0, 1.0).as_bytes())?;
        let title = format!("{}: observed reward range per arm", report.scenario);
        staging.write("figures/reward_range.svg", svg::range_bars(&title, &reward_ranges(report)).as_bytes())?;
    }
    for cp in &report.checkpoints {
        let stem = sanitize(&cp.file_stem());
        staging.json(&format!("checkpoints/{stem}.json"), cp)?;
        if let Checkpoint::Run {
            reward_matrix,
            policy_matrix,
            ..
        } = cp
        {
            staging.write(&format!("figures/{stem}_policy.svg"), svg::heatmap(&format!("{stem} policy"), policy_matrix).as_bytes())?;
            if let Some(m) = reward_matrix {
                staging.write(&format!("figures/{stem}_reward.svg"), svg::heatmap(&format!("{stem} reward"), m).as_bytes())?;
            }
        }
    }
    Ok(())
}

/// Writes every artifact of `report` under `out`, replacing a previous run
/// directory there. Refuses to replace a non-empty directory that is not a
/// run directory.
pub fn write_run(out: &Path, cfg: &ScenarioConfig, report: &ScenarioReport, wall_time_seconds: f64) -> Result<Manifest> {
    if out.exists() {
        let is_run = out.join(MANIFEST).is_file();
        let is_empty = out.is_dir() && fs::read_dir(out)?.next().is_none();
        if !is_run && !is_empty {
            return Err(Error::InvalidArgument(format!(
                "{} exists and is not a run directory; refusing to overwrite",
                out.display()
            )));
        }
    }
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let root = out.with_file_name(format!(".{name}.staging-{}", std::process::id()));
    if root.exists() {
        fs::remove_dir_all(&root)?;
    }
    fs::create_dir_all(&root)?;
    let mut staging = Staging {
        root: root.clone(),
        files: Vec::new(),
    };
    let result = (|| {
        stage(report, &mut staging)?;
        let mut files = staging.files.clone();
        files.push(MANIFEST.to_string());
        files.sort();
        let manifest = Manifest {
            scenario: report.scenario.to_string(),
            config: cfg.clone(),
            seeds: report.seeds.clone(),
            arms: report.arms.iter().map(|a| a.name.clone()).collect(),
            code_version: code_version(),
            wall_time_seconds,
            claims_pass: report.claims_pass(),
            files,
        };
        staging.json(MANIFEST, &manifest)?;
        if out.exists() {
            fs::remove_dir_all(out)?;
        }
        fs::rename(&root, out)?;
        Ok(manifest)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&root);
    }
    result
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the manifest and report of a completed run. Traces and checkpoints
/// are not reloaded.
pub fn load_run(dir: &Path) -> Result<(Manifest, ScenarioReport)> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    Ok((read_json(&manifest_path)?, read_json(&dir.join(REPORT))?))
}

/// Loads one checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}
