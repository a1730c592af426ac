//! One test per acceptance criterion; each prints a single PASS/FAIL line
//! with the measured value and its pinned bound. Criteria 7 and 8 need hours
//! of compute and run only with `--features slow -- --ignored`.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sacx::oracle::{self, OracleCheck};
use sacx::orchestrator::{
    parse_config, run_experiment, run_seed, Arm, CurvePoint, ExecutionMode, ExperimentConfig,
};

const SEED: u64 = 2024;

/// Written straight to stdout so the line shows even when output is captured.
fn report(criterion: u32, passed: bool, text: &str) {
    let line = format!(
        "criterion {criterion}: {} {text}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn report_oracle(criterion: u32, c: &OracleCheck, time_limit: Option<f64>) {
    let in_time = time_limit.is_none_or(|t| c.seconds < t);
    let limit = time_limit.map_or(String::new(), |t| format!(", limit {t}s"));
    report(
        criterion,
        c.passed && in_time,
        &format!(
            "{}: measured {:.3e} <= {:.1e} ({}; {:.2}s{limit})",
            c.name, c.measured, c.tolerance, c.detail, c.seconds
        ),
    );
    assert!(c.passed, "{c}");
    assert!(in_time, "{c}: over the time limit");
}

#[test]
fn criterion_1_gradient_correctness() {
    report_oracle(1, &oracle::gradients(SEED, 20).unwrap(), Some(60.0));
}

#[test]
fn criterion_2_retrace_oracle() {
    report_oracle(2, &oracle::retrace(SEED, 200), Some(10.0));
}

#[test]
fn criterion_3_gating_invariance() {
    report_oracle(3, &oracle::gating(SEED).unwrap(), None);
}

#[test]
fn criterion_4_reward_formulas() {
    report_oracle(4, &oracle::rewards(SEED, 100_000), None);
}

#[test]
fn criterion_5_action_filter() {
    report_oracle(5, &oracle::action_filter(SEED).unwrap(), None);
}

#[test]
fn criterion_6_physics_sanity() {
    report_oracle(6, &oracle::physics(SEED).unwrap(), None);
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::small_experiment(Arm::Mixed, dir.path());
    cfg.episodes = 50;
    cfg.episode_length = 100;
    cfg.switch_period = 20;
    cfg.learner_steps_per_env_step = 0.05;
    cfg.eval_every = 5;
    cfg.episode_log = true;
    let started = Instant::now();
    let run = || {
        let r = run_experiment(&cfg).unwrap().remove(0);
        let files = [
            &r.paths.curve,
            &r.paths.metrics,
            &r.paths.checkpoint,
            r.paths.episode_log.as_ref().unwrap(),
        ]
        .map(|p| std::fs::read(p).unwrap());
        (r.learner_steps, r.store.checksum().to_bits(), files)
    };
    let (a, b) = (run(), run());
    let identical = a == b;
    report(
        9,
        identical && a.0 > 0,
        &format!(
            "determinism: two 50-episode runs, {} learner steps each, curve/metrics/checkpoint/episode log {} ({:.1}s)",
            a.0,
            if identical { "byte-identical" } else { "DIFFER" },
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(a.0 > 0);
    assert!(identical);
}

// ---- Desk-scale learning (slow tier) ----

fn env_var<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn desk_dir(arm: Arm) -> PathBuf {
    let root = std::env::var_os("SACX_OUTPUT_DIR")
        .map_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")), PathBuf::from);
    root.join(format!("desk_{arm:?}").to_lowercase())
}

/// Default sizes and ratios, 3000 episodes, seeds 0..5, concurrent actor and
/// learner. For a dry run of the code path, `SACX_DESK_CONFIG` names a TOML
/// file to start from (its arm and task list are replaced), and
/// `SACX_DESK_EPISODES` / `SACX_DESK_SEEDS` shrink the budget.
fn desk_config(arm: Arm, dir: &Path) -> ExperimentConfig {
    let mut cfg = match std::env::var_os("SACX_DESK_CONFIG") {
        Some(path) => {
            let mut base = parse_config(Path::new(&path)).unwrap();
            base.arm = arm;
            base.tasks = None;
            base.asymmetric = arm.forces_asymmetric();
            base
        }
        None => ExperimentConfig {
            episodes: 3000,
            seeds: (0..5).collect(),
            mode: ExecutionMode::Concurrent,
            ..ExperimentConfig::for_arm(arm)
        },
    };
    if let Some(n) = env_var("SACX_DESK_EPISODES") {
        cfg.episodes = n;
    }
    if let Some(n) = env_var::<u64>("SACX_DESK_SEEDS") {
        cfg.seeds = (0..n).collect();
    }
    cfg.output_dir = dir.to_path_buf();
    cfg
}

/// Curves of the catch task with reward 5 in the given state space, per seed.
fn run_arm(arm: Arm) -> Vec<Vec<CurvePoint>> {
    let dir = desk_dir(arm);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = desk_config(arm, &dir);
    std::thread::scope(|s| {
        let cfg = &cfg;
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| s.spawn(move || run_seed(cfg, seed).unwrap()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap().curve)
            .collect()
    })
}

fn task_curve(curve: &[CurvePoint], cfg_arm: Arm, label: &str) -> Vec<CurvePoint> {
    let tasks = ExperimentConfig::for_arm(cfg_arm).task_specs().unwrap();
    let id = tasks.iter().find(|t| t.label() == label).unwrap().task_id;
    curve.iter().filter(|p| p.task == id).cloned().collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Best catch rate over any 100 consecutive evaluations.
fn best_window_catch_rate(c: &[CurvePoint]) -> f64 {
    let w = c.len().clamp(1, 100);
    c.windows(w)
        .map(|win| win.iter().filter(|p| p.catch).count() as f64 / w as f64)
        .fold(0.0, f64::max)
}

/// Catch rate over the last 100 evaluations.
fn final_catch_rate(c: &[CurvePoint]) -> f64 {
    let tail = &c[c.len().saturating_sub(100)..];
    tail.iter().filter(|p| p.catch).count() as f64 / tail.len().max(1) as f64
}

fn auc(c: &[CurvePoint]) -> f64 {
    c.iter().map(|p| p.eval_return).sum()
}

#[test]
#[cfg_attr(
    not(feature = "slow"),
    ignore = "weeks of single-core compute; run with --features slow -- --ignored"
)]
fn criterion_7_desk_scale_learning() {
    let features = run_arm(Arm::FeaturesOnly);
    let rate_5f = median(
        features
            .iter()
            .map(|c| best_window_catch_rate(&task_curve(c, Arm::FeaturesOnly, "5F")))
            .collect(),
    );
    let pixels = run_arm(Arm::PixelsOnly);
    let mixed = run_arm(Arm::Mixed);
    let asym = run_arm(Arm::MixedAsymmetric);
    let auc_of = |runs: &[Vec<CurvePoint>], arm| {
        median(
            runs.iter()
                .map(|c| auc(&task_curve(c, arm, "5P")))
                .collect(),
        )
    };
    let (auc_p, auc_m, auc_a) = (
        auc_of(&pixels, Arm::PixelsOnly),
        auc_of(&mixed, Arm::Mixed),
        auc_of(&asym, Arm::MixedAsymmetric),
    );
    let (a, b, c) = (rate_5f >= 0.5, auc_m > auc_p, auc_a >= 0.9 * auc_m);
    report(
        7,
        a && b && c,
        &format!(
            "desk-scale learning: (a) median best-100 5F catch rate {rate_5f:.2} >= 0.50 {}; (b) median 5P AUC mixed {auc_m:.1} > pixels-only {auc_p:.1} {}; (c) asymmetric {auc_a:.1} >= 0.9 x mixed {}",
            ok(a),
            ok(b),
            ok(c)
        ),
    );
    assert!(a && b && c);
}

#[test]
#[cfg_attr(
    not(feature = "slow"),
    ignore = "weeks of single-core compute; run with --features slow -- --ignored"
)]
fn criterion_8_distractor_robustness() {
    let rate = |arm| {
        median(
            run_arm(arm)
                .iter()
                .map(|c| final_catch_rate(&task_curve(c, arm, "5F")))
                .collect(),
        )
    };
    let (base, distracted) = (rate(Arm::FeaturesOnly), rate(Arm::Distractor));
    let diff = (distracted - base).abs();
    report(
        8,
        diff <= 0.2,
        &format!("distractor robustness: final median 5F catch rate {base:.2} without 8F, {distracted:.2} with; |diff| {diff:.2} <= 0.20"),
    );
    assert!(diff <= 0.2);
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}
