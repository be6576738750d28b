use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rrlab_core::labs::artifacts::load_checkpoint;
use rrlab_core::labs::Checkpoint;
use rrlab_core::toyworld::make_world;

const FAST: [&str; 8] = [
    "--override",
    "steps=6",
    "--override",
    "short_steps=3",
    "--override",
    "stage1.steps=20",
    "--override",
    "ppo.batch_size=16",
];

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn rrlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrlab"))
        .args(args)
        .env_remove("RRLAB_SEED")
        .output()
        .expect("binary runs")
}

fn run_fast(scenario: &str, out: &Path, extra: &[&str]) -> Output {
    run_fast_seeds(scenario, "0..2", out, extra)
}

fn run_fast_seeds(scenario: &str, seeds: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scenario", scenario, "--seeds", seeds, "--out", out.to_str().unwrap()];
    args.extend(FAST);
    args.extend(extra);
    rrlab(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

#[test]
fn shipped_configs_validate() {
    let files = json_files(&workspace().join("configs"));
    assert!(files.len() >= 8);
    for f in files {
        let o = rrlab(&["validate-config", f.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}: {}", f.display(), stderr(&o));
    }
}

#[test]
fn malformation_fixtures_are_rejected() {
    let files = json_files(&workspace().join("configs/invalid"));
    assert!(files.len() >= 10);
    for f in files {
        let o = rrlab(&["validate-config", f.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{} was accepted", f.display());
        assert!(stderr(&o).contains("config error"), "{}", stderr(&o));
    }
}

#[test]
fn syntax_errors_carry_line_and_column() {
    let f = workspace().join("configs/invalid/unknown_key.json");
    let o = rrlab(&["validate-config", f.to_str().unwrap()]);
    assert!(stderr(&o).contains("line 3 column"), "{}", stderr(&o));
}

#[test]
fn missing_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = rrlab(&["run", "--config", "does/not/exist.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_override_key_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_fast("standard", &out, &["--override", "ppo.betta=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown override key"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(rrlab(&[]).status.code(), Some(2));
    assert_eq!(rrlab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rrlab(&["run"]).status.code(), Some(2));
    assert_eq!(rrlab(&["run", "--scenario", "nope"]).status.code(), Some(2));
    assert_eq!(rrlab(&["run", "--scenario", "standard", "--seeds", "3..1"]).status.code(), Some(2));
    assert_eq!(rrlab(&["lemma1", "--scenario", "drift"]).status.code(), Some(2));
    assert_eq!(rrlab(&["--help"]).status.code(), Some(0));
}

#[test]
fn lemma1_passes_and_reports_probe_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lemma1");
    let o = run_fast("lemma1", &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let verdicts: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("verdicts.json")).unwrap()).unwrap();
    for v in verdicts.as_array().unwrap() {
        assert_eq!(v["passed"], true, "{v}");
    }
    assert!(out.join("metrics/lemma1/probes.csv").is_file());
    let report = rrlab(&["report", out.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0));
    let text = stdout(&report);
    for col in ["q_value", "advantage_max_abs", "grad_norm"] {
        assert!(text.contains(col), "{text}");
    }
}

#[test]
fn lemma1_verb_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("l");
    let mut args = vec!["lemma1", "--seeds", "4", "--out", out.to_str().unwrap()];
    args.extend(FAST);
    let o = rrlab(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn blend_identity_through_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("robust");
    let o = run_fast("robust_toy", &out, &["--override", "lambda=1.0"]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    for seed in 0..2 {
        let robust = fs::read(out.join(format!("metrics/robust/{seed}.csv"))).unwrap();
        let nominal = fs::read(out.join(format!("metrics/standard/{seed}.csv"))).unwrap();
        assert_eq!(robust, nominal, "seed {seed}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_fast("minmax", &a, &["--jobs", "1"]);
    run_fast("minmax", &b, &["--jobs", "2"]);
    for arm in ["min", "max", "mean"] {
        for seed in 0..2 {
            let rel = format!("metrics/{arm}/{seed}.csv");
            assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{rel}");
        }
    }
    for fig in ["figures/accuracy.svg", "figures/reward_range.svg", "verdicts.json"] {
        assert_eq!(fs::read(a.join(fig)).unwrap(), fs::read(b.join(fig)).unwrap(), "{fig}");
    }
}

#[test]
fn seed_env_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let seeds_of = |out: &Path| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()["seeds"].clone()
    };
    let run = |out: &Path, flag: Option<&str>| {
        let mut args = vec!["run", "--scenario", "drift", "--override", "drift.steps=3", "--out", out.to_str().unwrap()];
        if let Some(f) = flag {
            args.extend(["--seeds", f]);
        }
        Command::new(env!("CARGO_BIN_EXE_rrlab"))
            .args(&args)
            .env("RRLAB_SEED", "5,6")
            .output()
            .unwrap()
    };
    let from_env = dir.path().join("env");
    run(&from_env, None);
    assert_eq!(seeds_of(&from_env), serde_json::json!([5, 6]));
    let from_flag = dir.path().join("flag");
    run(&from_flag, Some("9"));
    assert_eq!(seeds_of(&from_flag), serde_json::json!([9]));
}

#[test]
fn failing_claim_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("drift");
    // with no perturbation there is nothing to pull back
    let o = rrlab(&[
        "run",
        "--scenario",
        "drift",
        "--seeds",
        "0",
        "--override",
        "drift.delta=0",
        "--override",
        "drift.steps=3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("drift/pulled_back"), "{}", stderr(&o));
    // artifacts are still written for inspection
    assert!(out.join("verdicts.json").is_file());
}

#[test]
fn report_without_manifest_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let o = rrlab(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no manifest"), "{}", stderr(&o));
}

#[test]
fn lambda_sweep_report_has_a_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    run_fast("lambda_sweep", &out, &["--override", "n_extra=1"]);
    let text = stdout(&rrlab(&["report", out.to_str().unwrap()]));
    assert!(text.contains("short_acc") && text.contains("final_acc"));
    for l in ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"] {
        assert_eq!(text.lines().filter(|line| line.starts_with(&format!("lambda_{l} "))).count(), 1, "{text}");
    }
}

fn cells(svg: &str) -> Vec<String> {
    svg.lines()
        .filter(|l| l.starts_with("<text") && l.contains("text-anchor=\"middle\""))
        .map(|l| l.rsplit_once("\">").unwrap().1.trim_end_matches("</text>").to_string())
        .collect()
}

#[test]
fn heatmaps_from_run_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("standard");
    run_fast("standard", &run, &[]);
    let figs = dir.path().join("figs");
    let o = rrlab(&["heatmap", run.to_str().unwrap(), "--out", figs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let golden = fs::read_to_string(figs.join("golden_seed0_reward.svg")).unwrap();
    assert!(golden.contains("color_scale"));
    let golden_cells = cells(&golden);
    assert_eq!(golden_cells.len(), 64);
    assert_eq!(golden_cells[0], "1.00");
    assert_eq!(golden_cells[1], "0.00");

    // reward-model heatmap cells are the model's reward matrix to 2 decimals
    let cp_path = run.join("checkpoints/reward_model_seed1.json");
    let Checkpoint::RewardModel { model, .. } = load_checkpoint(&cp_path).unwrap() else {
        panic!("expected a reward-model checkpoint");
    };
    let m = model.matrix(&make_world(8).unwrap()).unwrap();
    let expected: Vec<String> = m.data().iter().map(|v| format!("{v:.2}")).collect();
    let single = dir.path().join("single");
    let o = rrlab(&["heatmap", cp_path.to_str().unwrap(), "--out", single.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(cells(&fs::read_to_string(single.join("reward_model_seed1.svg")).unwrap()), expected);

    let o = rrlab(&["heatmap", "no/such/checkpoint.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn constant_reward_heatmap_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("stochastic");
    run_fast_seeds("stochastic", "0", &run, &["--override", "warm_start.steps=3"]);
    let figs = dir.path().join("figs");
    rrlab(&["heatmap", run.join("checkpoints/constant_seed0.json").to_str().unwrap(), "--out", figs.to_str().unwrap()]);
    let svg = fs::read_to_string(figs.join("constant_seed0_reward.svg")).unwrap();
    assert!(cells(&svg).iter().all(|c| c == "0.00"));
    let fills: std::collections::BTreeSet<&str> = svg.lines().filter(|l| l.starts_with("<rect")).map(|l| l.split("fill=\"").nth(1).unwrap()).collect();
    assert_eq!(fills.len(), 1);
}
