//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p rrlab-core --test acceptance`.

use std::time::{Duration, Instant};

use rrlab_core::ensemble::{
    calibrate_source, denormalize_reward, make_synthetic_set, normalize_reward, IntegrationStrategy,
    RewardSignal, RewardSource, SourceStats, SyntheticKind,
};
use rrlab_core::labs::{run_scenario, ScenarioConfig, ScenarioKind, ScenarioReport};
use rrlab_core::numerics::gradcheck::check_gradient;
use rrlab_core::numerics::{Activation, NetConfig, Rng};
use rrlab_core::ppo::{surrogate, Experience, PolicyModel};
use rrlab_core::rewardnet::brme::{
    partition_dataset, sigma_grad_expectation, stage2_loss, train_stage2, BrmeConfig, BrmeModel, GaussianReward, LossMode,
    PairNoise, Stage2Config,
};
use rrlab_core::rewardnet::{mle_loss, train_stage1, ScalarRewardModel, Stage1Config};
use rrlab_core::toyworld::{annotate, make_world};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

const FD_TOL: f64 = 1e-4;

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(passed: bool, summary: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        summary: summary.into(),
    }
}

fn scenario(kind: ScenarioKind) -> (ScenarioReport, Duration) {
    let start = Instant::now();
    let report = run_scenario(&ScenarioConfig::for_scenario(kind)).expect("scenario runs");
    (report, start.elapsed())
}

fn verdict_passed(report: &ScenarioReport, name: &str) -> bool {
    report.verdict(name).unwrap_or_else(|| panic!("verdict {name} missing")).passed
}

fn measured(report: &ScenarioReport, verdict: &str, key: &str) -> f64 {
    report.verdict(verdict).and_then(|v| v.measured.get(key).copied()).unwrap_or(f64::NAN)
}

fn lemma1() -> Outcome {
    let start = Instant::now();
    let cfg = ScenarioConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lemma1.json"))
        .expect("shipped lemma1 config");
    let report = run_scenario(&cfg).expect("lemma1 runs");
    let elapsed = start.elapsed();
    let probes = &report.lemma1_probes;
    let max_adv = probes.iter().map(|p| p.advantage_max_abs).fold(0.0, f64::max);
    let max_grad = probes.iter().map(|p| p.grad_norm).fold(0.0, f64::max);
    let max_q_err = probes
        .iter()
        .map(|p| (p.q_value - p.c / (1.0 - p.gamma)).abs())
        .fold(0.0, f64::max);
    let ranges_ok = probes.iter().all(|p| (-5.0..=5.0).contains(&p.c) && (0.0..=0.99).contains(&p.gamma));
    let passed = probes.len() == 50
        && ranges_ok
        && max_adv == 0.0
        && max_grad < 1e-10
        && max_q_err <= 1e-12
        && report.claims_pass()
        && elapsed < Duration::from_secs(10);
    outcome(
        passed,
        format!(
            "{} probes, max|adv| = {max_adv:e}, max grad = {max_grad:.2e}, max |Q - c/(1-γ)| = {max_q_err:.2e}, {:.1}s",
            probes.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn imperfection(standard: &(ScenarioReport, Duration)) -> Outcome {
    let (report, elapsed) = standard;
    let below = measured(report, "standard_imperfect", "seeds_below_optimal");
    let golden = measured(report, "golden_control_optimal", "seeds_optimal");
    let passed = report.seeds.len() == 10
        && verdict_passed(report, "standard_imperfect")
        && verdict_passed(report, "golden_control_optimal")
        && *elapsed < Duration::from_secs(300);
    outcome(
        passed,
        format!(
            "standard below 1.0 on {below}/10 seeds, golden at 1.0 on {golden}/10, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn robustness(robust: &(ScenarioReport, Duration)) -> Outcome {
    let (report, elapsed) = robust;
    let arm = report.arm("robust").expect("robust arm");
    let l1 = report.arm("lambda_1").expect("lambda_1 arm");
    let passed = report.seeds.len() == 10
        && arm.median_final() == 1.0
        && arm.mean_final >= l1.mean_final
        && *elapsed < Duration::from_secs(600);
    outcome(
        passed,
        format!(
            "median {:.3}, mean {:.4} vs λ=1 mean {:.4}, {:.1}s",
            arm.median_final(),
            arm.mean_final,
            l1.mean_final,
            elapsed.as_secs_f64()
        ),
    )
}

fn blend_identity(robust: &(ScenarioReport, Duration)) -> Outcome {
    let (report, _) = robust;
    let mut identical = 0;
    for &seed in &report.seeds {
        let a = report.csv("lambda_1", seed).expect("run present").expect("csv");
        let b = report.csv("standard", seed).expect("run present").expect("csv");
        identical += usize::from(a == b);
    }
    // also through the reward signal itself, on stochastic sources
    let nominal = RewardSource::Gaussian {
        id: "n".into(),
        mean: 0.3,
        std: 1.0,
    };
    let set = make_synthetic_set(SyntheticKind::GaussianRandom, 4).unwrap();
    let blended = RewardSignal::new(nominal.clone(), set.clone(), IntegrationStrategy::blend(1.0).unwrap());
    let plain = RewardSignal::new(nominal, set, IntegrationStrategy::NOMINAL_ONLY);
    let (mut ra, mut rb) = (Rng::new(5), Rng::new(5));
    let same_stream = (0..10_000).all(|i| {
        blended.score(i % 8, i % 7, &mut ra).unwrap().to_bits() == plain.score(i % 8, i % 7, &mut rb).unwrap().to_bits()
    });
    outcome(
        identical == report.seeds.len() && same_stream,
        format!("metrics CSVs identical on {identical}/{} seeds; 10000 signal draws bit-identical: {same_stream}", report.seeds.len()),
    )
}

fn sigma_gradient() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut worst_rel = 0.0f64;
    let mut worst_z = f64::INFINITY;
    let mut count = 0;
    for probe in 0..20 {
        let plus = GaussianReward {
            mu: rng.normal(),
            sigma: rng.uniform_range(0.25, 2.0),
            head_id: 0,
        };
        let minus = GaussianReward {
            mu: rng.normal(),
            sigma: rng.uniform_range(0.25, 2.0),
            head_id: 0,
        };
        let p_hat = rng.uniform_range(0.05, 0.95);
        for mode in [LossMode::Separated, LossMode::Literal] {
            let est = sigma_grad_expectation(&plus, &minus, p_hat, 2.0, mode, 1_000_000, &mut Rng::derive(probe, "sigma-mc")).unwrap();
            for (mc, g) in [(est.plus, plus), (est.minus, minus)] {
                let target = 2.0 * g.sigma;
                worst_rel = worst_rel.max((mc.mean - target).abs() / target);
                // how many standard errors above zero (negative means below)
                worst_z = worst_z.min(mc.mean / mc.std_err + 3.0);
                count += 1;
            }
        }
    }
    outcome(
        worst_rel < 0.05 && worst_z >= 0.0,
        format!("{count} estimates at 10^6 samples, max relative error vs 2σ = {worst_rel:.4}, all ≥ 0 within 3 SE: {}", worst_z >= 0.0),
    )
}

fn stage2_confidence() -> Outcome {
    let world = make_world(8).unwrap();
    let data = annotate(&world, &mut Rng::derive(0, "data"));
    let (rm, _) = train_stage1(&world, &data, &Stage1Config::default(), &mut Rng::derive(0, "rm")).unwrap();
    let cfg = Stage2Config::default();
    let assignment = partition_dataset(data.len(), cfg.brme.n_heads, &mut Rng::derive(0, "partition")).unwrap();
    let (_, report) = train_stage2(&world, &rm, &data, &assignment, &cfg, &mut Rng::derive(0, "brme")).unwrap();
    let decreased = report
        .initial_mean_sigma
        .iter()
        .zip(&report.final_mean_sigma)
        .filter(|(a, b)| b < a)
        .count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    outcome(
        decreased == cfg.brme.n_heads,
        format!(
            "mean σ per head [{}] → [{}]",
            fmt(&report.initial_mean_sigma),
            fmt(&report.final_mean_sigma)
        ),
    )
}

/// `E[min of n iid N(0,1)]` by trapezoidal quadrature of
/// `x · n φ(x) (1 - Φ(x))^(n-1)` over [-10, 10].
fn expected_min_quadrature(n: i32) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let steps = 200_000;
    let h = 20.0 / steps as f64;
    (0..=steps)
        .map(|i| {
            let x = -10.0 + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            w * x * n as f64 * normal.pdf(x) * (1.0 - normal.cdf(x)).powi(n - 1)
        })
        .sum::<f64>()
        * h
}

fn min_samples(n: usize, draws: usize, seed: u64) -> Vec<f64> {
    let zero = RewardSource::Constant {
        id: "zero".into(),
        value: 0.0,
    };
    let signal = RewardSignal::new(zero, make_synthetic_set(SyntheticKind::GaussianRandom, n).unwrap(), IntegrationStrategy::MIN);
    let mut rng = Rng::new(seed);
    (0..draws).map(|i| signal.score(i % 8, i % 8, &mut rng).unwrap()).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn order_statistics() -> Outcome {
    let oracle = expected_min_quadrature(5);
    let (m5, v5) = mean_var(&min_samples(5, 1_000_000, 7));
    let (_, v2) = mean_var(&min_samples(2, 1_000_000, 8));
    let target2 = 1.0 - 1.0 / std::f64::consts::PI;
    let passed = v5.sqrt() < 1.0 && (m5 - oracle).abs() <= 0.02 && (oracle + 1.163).abs() < 1e-3 && (v2 - target2).abs() <= 0.01;
    outcome(
        passed,
        format!(
            "min of 5: mean {m5:.4} (oracle {oracle:.5}), std {:.4}; min of 2: var {v2:.4} (1-1/π = {target2:.4})",
            v5.sqrt()
        ),
    )
}

fn stochastic(report: &ScenarioReport) -> Outcome {
    let seeds = measured(report, "degradation_ordering", "seeds");
    let exact = measured(report, "exact_constant_no_degradation", "max_abs_degradation");
    let passed = seeds >= 6.0 && exact < 0.01;
    outcome(
        passed,
        format!(
            "ordering holds on {seeds}/10 seeds (mean degradation constant {:.4}, min-random {:.4}, random {:.4}); exact-critic max |degradation| {exact}",
            measured(report, "degradation_ordering", "constant_mean_degradation"),
            measured(report, "degradation_ordering", "min_random_mean_degradation"),
            measured(report, "degradation_ordering", "random_mean_degradation"),
        ),
    )
}

fn minmax(report: &ScenarioReport) -> Outcome {
    let stable = measured(report, "min_more_stable_than_max", "seeds");
    let between = measured(report, "mean_between_min_and_max", "seeds");
    outcome(
        stable >= 6.0 && between >= 6.0,
        format!("min no less stable than max on {stable}/10 seeds; mean between on {between}/10"),
    )
}

fn normalization() -> Outcome {
    let mut rng = Rng::new(77);
    let probes: Vec<(usize, usize)> = (0..500).map(|_| (rng.below(8), rng.below(8))).collect();
    let world = make_world(8).unwrap();
    let data = annotate(&world, &mut Rng::new(1));
    let (rm, _) = train_stage1(&world, &data, &Stage1Config::default(), &mut Rng::new(2)).unwrap();
    let sources = [
        RewardSource::from_model("rm", &rm, &world).unwrap(),
        RewardSource::Gaussian {
            id: "g".into(),
            mean: 3.0,
            std: 7.5,
        },
    ];
    // calibrating and then querying with the same stream reproduces the calibration values
    let mut worst = 0.0f64;
    for (i, source) in sources.iter().enumerate() {
        let stats = calibrate_source(source, &probes, &mut Rng::new(3 + i as u64)).unwrap();
        let normalized = RewardSource::Normalized {
            inner: Box::new(source.clone()),
            stats,
        };
        let mut replay = Rng::new(3 + i as u64);
        let values: Vec<f64> = probes.iter().map(|&(x, a)| normalized.query(x, a, &mut replay)).collect();
        let (m, v) = mean_var(&values);
        worst = worst.max(m.abs()).max((v.sqrt() - 1.0).abs());
    }
    let fixture = SourceStats {
        source_id: "table7".into(),
        mean: -0.032,
        std: 4.529,
        calibration_size: 0,
    };
    let round_trip = [-12.0, -0.032, 0.0, 4.497, 17.3]
        .iter()
        .map(|&raw| (denormalize_reward(normalize_reward(raw, &fixture), &fixture) - raw).abs())
        .fold(0.0, f64::max);
    let anchors = normalize_reward(-0.032, &fixture).abs() + (normalize_reward(-0.032 + 4.529, &fixture) - 1.0).abs();
    outcome(
        worst <= 1e-12 && round_trip <= 1e-12 && anchors <= 1e-12,
        format!("calibration mean/std error {worst:.1e}; fixture round-trip error {round_trip:.1e}, anchor error {anchors:.1e}"),
    )
}

fn tanh_net(width: usize) -> NetConfig {
    NetConfig {
        activation: Activation::Tanh,
        hidden_width: width,
        hidden_layers: 1,
        output_init_scale: 1.0,
    }
}

fn gradients() -> Outcome {
    let world = make_world(6).unwrap();
    let data = annotate(&world, &mut Rng::new(4));
    let mut rng = Rng::new(99);

    // MLE: 10 models × 10 coordinates
    let mut mle = 0.0f64;
    for seed in 0..10 {
        let rm = ScalarRewardModel::new(6, &tanh_net(12), &mut Rng::new(seed)).unwrap();
        let batch = &data.examples[..8];
        let analytic = mle_loss(&rm, batch).unwrap().grads;
        let check = check_gradient(rm.net.params(), &analytic, 10, &mut rng, |p| {
            let mut probe = rm.clone();
            probe.net.params_mut().copy_from_slice(p);
            mle_loss(&probe, batch).unwrap().loss
        });
        mle = mle.max(check.max_relative_error);
    }

    // stage-2 MSE with fixed noise: 5 models × (trunk 10 + head 2) coordinates, both modes
    let mut mse = 0.0f64;
    let mut mse_probes = 0;
    for seed in 0..5 {
        for mode in [LossMode::Separated, LossMode::Literal] {
            let cfg = BrmeConfig {
                trunk: tanh_net(8),
                ..BrmeConfig::default()
            };
            let mut m = BrmeModel::new(6, &cfg, &mut Rng::new(100 + seed)).unwrap();
            m.loss_mode = mode;
            let assignment = partition_dataset(data.len(), cfg.n_heads, &mut rng).unwrap();
            let p_hat: Vec<f64> = (0..data.len()).map(|_| rng.uniform_range(0.1, 0.9)).collect();
            let noise: Vec<PairNoise> = (0..data.len()).map(|_| (rng.normal(), rng.normal())).collect();
            let batch = stage2_loss(&m, &data, &p_hat, &assignment, &noise).unwrap();
            let trunk = check_gradient(m.trunk.params(), &batch.trunk_grads, 5, &mut rng, |p| {
                let mut probe = m.clone();
                probe.trunk.params_mut().copy_from_slice(p);
                stage2_loss(&probe, &data, &p_hat, &assignment, &noise).unwrap().loss
            });
            mse = mse.max(trunk.max_relative_error);
            mse_probes += 5;
            for h in 0..m.n_heads() {
                let head = check_gradient(m.heads[h].params(), &batch.head_grads[h], 1, &mut rng, |p| {
                    let mut probe = m.clone();
                    probe.heads[h].params_mut().copy_from_slice(p);
                    stage2_loss(&probe, &data, &p_hat, &assignment, &noise).unwrap().loss
                });
                mse = mse.max(head.max_relative_error);
                mse_probes += 1;
            }
        }
    }

    // surrogate: batches mixing unclipped and clipped experiences, 10 policies × 10 coordinates
    let mut sur = 0.0f64;
    let mut clipped_total = 0;
    for seed in 0..10 {
        let policy = PolicyModel::new(6, &tanh_net(10), &mut Rng::new(200 + seed)).unwrap();
        let mut exps = Vec::new();
        let mut advs = Vec::new();
        for i in 0..12 {
            let (prompt, action) = (rng.below(6), rng.below(6));
            // ratios well inside or well outside [0.8, 1.2] so FD never straddles a kink
            let ratio: f64 = [1.05, 0.95, 1.6, 0.5][i % 4];
            let adv = if i % 8 < 4 { 1.0 } else { -1.0 } * rng.uniform_range(0.2, 2.0);
            exps.push(Experience {
                prompt,
                action,
                behavior_logprob: policy.log_probs(prompt)[action] - ratio.ln(),
                shaped_reward: 0.0,
                raw_reward: 0.0,
                kl_penalty: 0.0,
            });
            advs.push(adv);
        }
        let s = surrogate(&policy, &exps, &advs, 0.2).unwrap();
        clipped_total += s.clipped;
        let check = check_gradient(policy.net.params(), &s.grads, 10, &mut rng, |p| {
            let mut probe = policy.clone();
            probe.net.params_mut().copy_from_slice(p);
            surrogate(&probe, &exps, &advs, 0.2).unwrap().value
        });
        sur = sur.max(check.max_relative_error);
    }
    outcome(
        mle < FD_TOL && mse < FD_TOL && sur < FD_TOL && mse_probes == 100 && clipped_total > 0,
        format!(
            "max relative error: MLE {mle:.1e} (100 probes), MSE {mse:.1e} ({mse_probes} probes), surrogate {sur:.1e} (100 probes, {clipped_total} clipped samples)"
        ),
    )
}

fn determinism(standard: &(ScenarioReport, Duration)) -> Outcome {
    let (first, _) = standard;
    let (second, _) = scenario(ScenarioKind::Standard);
    let mut same = 0;
    let mut total = 0;
    for (arm, record) in &first.runs {
        total += 1;
        let a = record.to_csv().unwrap();
        if second.csv(arm, record.seed).and_then(|r| r.ok()).as_deref() == Some(a.as_str()) {
            same += 1;
        }
    }
    outcome(
        same == total && total > 0 && first == &second,
        format!("{same}/{total} metrics CSVs byte-identical on re-run; reports equal: {}", first == &second),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("{} {n:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.summary);
        results.push((n, name, o));
    };

    record(1, "lemma1", lemma1());
    let standard = scenario(ScenarioKind::Standard);
    record(2, "toy imperfection", imperfection(&standard));
    let robust = scenario(ScenarioKind::RobustToy);
    record(3, "toy robustness", robustness(&robust));
    record(4, "blend identity", blend_identity(&robust));
    record(5, "sigma gradient", sigma_gradient());
    record(6, "stage-2 confidence", stage2_confidence());
    record(7, "order statistics", order_statistics());
    record(8, "stochastic ordering", stochastic(&scenario(ScenarioKind::Stochastic).0));
    record(9, "min/max/mean", minmax(&scenario(ScenarioKind::Minmax).0));
    record(10, "normalization", normalization());
    record(11, "gradients", gradients());
    record(12, "determinism", determinism(&standard));

    let failed: Vec<_> = results.iter().filter(|(_, _, o)| !o.passed).map(|(n, name, _)| format!("{n} ({name})")).collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
