//! `rrlab`: run experiment scenarios, validate configs, render reports and
//! heatmaps.
//!
//! Exit codes: 0 when every published-claim verdict passes, 1 when one
//! fails, 2 for usage, config or I/O errors.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rrlab_core::labs::artifacts::{load_checkpoint, load_run, write_run};
use rrlab_core::labs::svg::heatmap;
use rrlab_core::labs::{parse_seeds, render_report, run_scenario, Checkpoint, ScenarioConfig, ScenarioKind};
use rrlab_core::toyworld::make_world;

/// Environment variable consulted for the seed list when `--seeds` is absent.
const SEED_ENV: &str = "RRLAB_SEED";

#[derive(Debug, Parser)]
#[command(name = "rrlab", version, about = "Reward-robust RLHF toy laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
    /// Run several scenarios (all of them by default), one directory each.
    Sweep(SweepArgs),
    /// Run the zero-advantage / zero-gradient check scenario.
    Lemma1(RunArgs),
    /// Print the summary table of a completed run directory.
    Report {
        /// Run directory written by `run`, `sweep` or `lemma1`.
        dir: PathBuf,
    },
    /// Render reward and policy heatmaps from a checkpoint or run directory.
    Heatmap {
        /// A checkpoint JSON file, or a run directory (all its checkpoints).
        input: PathBuf,
        /// Directory for the SVG files.
        #[arg(long, default_value = "heatmaps")]
        out: PathBuf,
    },
    /// Check that config files parse and satisfy every invariant.
    ValidateConfig {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON scenario config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed list such as `0..10` or `0,3,7` (overrides RRLAB_SEED).
    #[arg(long)]
    seeds: Option<String>,
    /// Dotted-path override, e.g. `ppo.beta=0.1`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario name; required unless `--config` names one.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory (default `runs/<scenario>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Scenario to include. Repeatable; all scenarios when absent.
    #[arg(long)]
    scenario: Vec<String>,
    /// Parent directory; each scenario writes to `<out>/<scenario>`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Failure modes mapped onto exit codes.
enum Failure {
    /// Usage, config or I/O problem (exit 2).
    Usage(String),
    /// A published-claim verdict failed (exit 1).
    Claims(Vec<String>),
}

impl From<rrlab_core::Error> for Failure {
    fn from(e: rrlab_core::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn parse_scenario(name: &str) -> Result<ScenarioKind, Failure> {
    name.parse().map_err(|e: rrlab_core::Error| Failure::Usage(e.to_string()))
}

/// Builds the effective config: file (or defaults), then scenario, seeds,
/// jobs and overrides. Nothing is written before this succeeds.
fn resolve(scenario: Option<ScenarioKind>, common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match (&common.config, scenario) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Some(kind)) => ScenarioConfig::for_scenario(kind),
        (None, None) => return Err(Failure::Usage("either --scenario or --config is required".into())),
    };
    if let Some(kind) = scenario {
        if common.config.is_some() && kind != cfg.scenario {
            return Err(Failure::Usage(format!(
                "--scenario {kind} conflicts with scenario `{}` in the config file",
                cfg.scenario
            )));
        }
        cfg.scenario = kind;
    }
    let seed_spec = match &common.seeds {
        Some(s) => Some(s.clone()),
        None => std::env::var(SEED_ENV).ok().filter(|s| !s.trim().is_empty()),
    };
    if let Some(spec) = seed_spec {
        cfg.seeds = parse_seeds(&spec)?;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    let cfg = cfg.with_overrides(&common.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn progress(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Runs one resolved scenario into `out`; returns the names of failing
/// published-claim verdicts.
fn execute(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<String>, Failure> {
    progress(&format!("[{}] seeds {:?}, {} steps", cfg.scenario, cfg.seeds, cfg.steps));
    let start = Instant::now();
    let report = run_scenario(cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_run(out, cfg, &report, elapsed)?;
    print!("{}", render_report(&report));
    progress(&format!("[{}] wrote {} in {elapsed:.1}s", cfg.scenario, out.display()));
    Ok(report.failing_claims().iter().map(|v| format!("{}/{}", cfg.scenario, v.name)).collect())
}

fn claims(failing: Vec<String>) -> Result<(), Failure> {
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Claims(failing))
    }
}

fn cmd_run(args: &RunArgs, forced: Option<ScenarioKind>) -> Result<(), Failure> {
    let scenario = match (forced, &args.scenario) {
        (Some(kind), Some(name)) if parse_scenario(name)? != kind => {
            return Err(Failure::Usage(format!("this verb always runs `{kind}`, not `{name}`")))
        }
        (Some(kind), _) => Some(kind),
        (None, Some(name)) => Some(parse_scenario(name)?),
        (None, None) => None,
    };
    let cfg = resolve(scenario, &args.common)?;
    let out = args.out.clone().unwrap_or_else(|| Path::new("runs").join(cfg.scenario.name()));
    claims(execute(&cfg, &out)?)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let kinds = if args.scenario.is_empty() {
        ScenarioKind::ALL.to_vec()
    } else {
        args.scenario.iter().map(|s| parse_scenario(s)).collect::<Result<_, _>>()?
    };
    if args.common.config.is_some() && kinds.len() > 1 {
        return Err(Failure::Usage("--config names a single scenario; pass exactly one --scenario with it".into()));
    }
    // resolve everything first so a bad override aborts before any run
    let cfgs = kinds
        .iter()
        .map(|k| resolve(Some(*k), &args.common))
        .collect::<Result<Vec<_>, _>>()?;
    let mut failing = Vec::new();
    for cfg in &cfgs {
        failing.extend(execute(cfg, &args.out.join(cfg.scenario.name()))?);
    }
    claims(failing)
}

fn cmd_report(dir: &Path) -> Result<(), Failure> {
    let (_, report) = load_run(dir)?;
    print!("{}", render_report(&report));
    Ok(())
}

fn heatmaps_for(cp: &Checkpoint) -> Result<Vec<(String, String)>, Failure> {
    let stem = cp.file_stem();
    Ok(match cp {
        Checkpoint::Run {
            reward_matrix,
            policy_matrix,
            ..
        } => {
            let mut out = vec![(format!("{stem}_policy.svg"), heatmap(&format!("{stem} policy"), policy_matrix))];
            if let Some(m) = reward_matrix {
                out.push((format!("{stem}_reward.svg"), heatmap(&format!("{stem} reward"), m)));
            }
            out
        }
        Checkpoint::RewardModel { model, .. } => {
            let world = make_world(model.k)?;
            vec![(format!("{stem}.svg"), heatmap(&format!("{stem} reward"), &model.matrix(&world)?))]
        }
    })
}

fn cmd_heatmap(input: &Path, out: &Path) -> Result<(), Failure> {
    let files: Vec<PathBuf> = if input.is_dir() {
        let dir = input.join("checkpoints");
        if !dir.is_dir() {
            return Err(Failure::Usage(format!("{} has no checkpoints/ directory", input.display())));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "json"));
        files.sort();
        files
    } else if input.is_file() {
        vec![input.to_path_buf()]
    } else {
        return Err(Failure::Usage(format!("checkpoint {} not found", input.display())));
    };
    let mut rendered = Vec::new();
    for f in &files {
        let cp = load_checkpoint(f).map_err(|e| Failure::Usage(format!("{}: {e}", f.display())))?;
        rendered.extend(heatmaps_for(&cp)?);
    }
    fs::create_dir_all(out)?;
    for (name, svg) in &rendered {
        fs::write(out.join(name), svg)?;
    }
    progress(&format!("wrote {} heatmaps to {}", rendered.len(), out.display()));
    Ok(())
}

fn cmd_validate(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut errors = Vec::new();
    for p in paths {
        match ScenarioConfig::load(p) {
            Ok(cfg) => progress(&format!("ok {} ({})", p.display(), cfg.scenario)),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Usage(errors.join("\n")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args, None),
        Command::Lemma1(args) => cmd_run(args, Some(ScenarioKind::Lemma1)),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report { dir } => cmd_report(dir),
        Command::Heatmap { input, out } => cmd_heatmap(input, out),
        Command::ValidateConfig { paths } => cmd_validate(paths),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Claims(names)) => {
            for n in names {
                eprintln!("verdict failed: {n}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
