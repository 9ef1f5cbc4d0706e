//! One line per acceptance criterion. Run with
//! `cargo test -p ecot-core --test acceptance`; exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{noisy_scene, oracle, random_chain, random_delta, setup, twelve_mp, COMMON_LABELS};
use ecot_core::annotators::filter_detections;
use ecot_core::chain::{count_action_only, parse, serialize, ChainProfile, Layout, Section};
use ecot_core::data::{BoundingBox, RobotState};
use ecot_core::intervention::{apply_edits, correct, Edit, EditOp, InterventionError, RuleCorrector, FREEZE_HORIZON};
use ecot_core::motion::{classify_move, MovementLabel, LABEL_COUNT};
use ecot_core::pipeline::{run, stats, PipelineConfig};
use ecot_core::projection::{fit_projection, ProjectionMatrix, RansacConfig};
use ecot_core::scheduler::{
    calibrate, freeze_bound, simulate, simulate_with_freezes, speedup, CalibrationTargets, CostModel, FreezeSchedule,
    Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn grammar() -> Outcome {
    let all: Vec<MovementLabel> = MovementLabel::all().collect();
    check!(all.len() == LABEL_COUNT && LABEL_COUNT == 729, "{} labels", all.len());
    for l in &all {
        let back: MovementLabel = l.render().parse().map_err(|e| format!("{}: {e}", l.render()))?;
        check!(back == *l, "{} does not round-trip", l.render());
    }
    let rendered: std::collections::BTreeSet<String> = all.iter().map(MovementLabel::render).collect();
    check!(rendered.len() == 729, "renderings are not distinct");
    let common: Vec<&str> = COMMON_LABELS.lines().collect();
    check!(common.len() == 54, "{} common labels", common.len());
    for l in &common {
        check!(rendered.contains(*l), "missing common label `{l}`");
    }
    for l in ["stop", "move left", "move backward left"] {
        check!(rendered.contains(l), "missing `{l}`");
    }
    Ok("729 labels, 54 common ones present".into())
}

fn classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let mut a = [0.0; 7];
        let mut b = [0.0; 7];
        for i in 0..7 {
            a[i] = rng.random_range(-1.0..1.0);
            b[i] = a[i] + random_delta(&mut rng);
        }
        if rng.random_bool(0.1) {
            a[1] = 0.0;
            b[1] = 0.03;
        }
        let got = classify_move(&RobotState::from_array(a), &RobotState::from_array(b), 0.03)
            .map_err(|e| e.to_string())?
            .render();
        let want = oracle(&a, &b, 0.03);
        check!(got == want, "{a:?} -> {b:?}: got `{got}`, want `{want}`");
    }
    Ok("10000 pairs agree with the oracle".into())
}

fn ransac() -> Outcome {
    let family = twelve_mp();
    let mut worst_frob = 0.0f64;
    let mut worst_err = 0.0f64;
    for cam in 0..100u64 {
        let (truth, corrs, inliers) = noisy_scene(cam, &family, 50, 0.5);
        let fit = fit_projection(&corrs, &RansacConfig { seed: cam, ..Default::default() })
            .map_err(|e| format!("camera {cam}: {e}"))?;
        let truth = ProjectionMatrix::new(truth).map_err(|e| e.to_string())?;
        let frob = fit.matrix.frobenius_distance(&truth);
        worst_frob = worst_frob.max(frob);
        worst_err = worst_err.max(fit.mean_inlier_error);
        check!(frob <= 1e-3, "camera {cam}: frobenius {frob:.2e}");
        check!(fit.mean_inlier_error < 1.0, "camera {cam}: mean error {:.3} px", fit.mean_inlier_error);
        for (k, (&want, &got)) in inliers.iter().zip(&fit.inliers).enumerate() {
            check!(!want || got, "camera {cam}: inlier {k} rejected");
        }
    }
    Ok(format!("100 cameras, worst frobenius {worst_frob:.2e}, worst mean error {worst_err:.3} px"))
}

fn detection_filter() -> Outcome {
    let det = |box_conf: f64, text_conf: f64| BoundingBox {
        label: "cup".into(),
        x1: 0.0,
        y1: 0.0,
        x2: 10.0,
        y2: 10.0,
        box_conf,
        text_conf,
    };
    let cases = [((0.30, 0.21), false), ((0.31, 0.21), true), ((0.31, 0.20), false), ((0.90, 0.90), true)];
    for ((b, t), keep) in cases {
        let kept = filter_detections(&[det(b, t)], 0.3, 0.2).len() == 1;
        check!(kept == keep, "box {b} text {t}: kept = {kept}");
    }
    Ok("thresholds are strict".into())
}

fn default_run(dir: &std::path::Path) -> Result<PipelineConfig, String> {
    let cfg = setup(dir);
    run(&cfg).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn chain_format() -> Outcome {
    for (seed, layout) in [(1, Layout::Standard), (2, Layout::FrozenBbox)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut accepted = 0;
        while accepted < 1000 {
            let chain = random_chain(&mut rng, layout);
            if chain.validate().is_err() {
                continue;
            }
            let text = serialize(&chain);
            let back = parse(&text).map_err(|e| format!("{e}: {text}"))?;
            check!(back == chain && serialize(&back) == text, "round-trip changed {text}");
            if layout == Layout::FrozenBbox {
                check!(
                    text.find("VISIBLE OBJECTS:") < text.find("SUBTASK REASONING:"),
                    "objects after subtask: {text}"
                );
            }
            accepted += 1;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = default_run(dir.path())?;
    let s = stats(&cfg.output).map_err(|e| e.to_string())?;
    let cut = s.frozen_bbox_reduction.ok_or("no chains")?;
    check!((0.30..=0.50).contains(&cut), "frozen-bbox reduction {:.1}%", cut * 100.0);
    Ok(format!("2x1000 round-trips, frozen-bbox reduction {:.1}%", cut * 100.0))
}

fn token_budget() -> Outcome {
    check!(count_action_only().generated == 7, "action-only budget {}", count_action_only().generated);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = default_run(dir.path())?;
    let s = stats(&cfg.output).map_err(|e| e.to_string())?;
    let t = &s.tokens[&Layout::Standard].generated;
    check!((280.0..=420.0).contains(&t.mean), "mean {:.1} tokens", t.mean);
    Ok(format!("action only 7, chains mean {:.1} p90 {} max {}", t.mean, t.p90, t.max))
}

fn scheduler() -> Outcome {
    let c = calibrate(&CalibrationTargets::default()).map_err(|e| e.to_string())?;
    let sync = c.achieved_sync.ok_or("no sync")?;
    let asy = c.achieved_async.ok_or("no async")?;
    check!((sync - 1.24).abs() <= 0.05, "sync {sync:.4}");
    check!((asy - 1.40).abs() <= 0.05, "async {asy:.4}");

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let profile = ChainProfile::new(rng.random_range(0..400), rng.random_range(0..400));
        let cost = CostModel {
            gen_cost: 1.0,
            enc_cost: rng.random_range(0.0..0.2),
            overhead: rng.random_range(0.0..20.0),
        };
        let steps = rng.random_range(1..300);
        let naive = simulate(Strategy::Naive, &profile, &cost, steps).map_err(|e| e.to_string())?;
        let one = simulate(Strategy::SyncFreeze(1), &profile, &cost, steps).map_err(|e| e.to_string())?;
        check!(naive.steps == one.steps && naive.total_time == one.total_time, "SyncFreeze(1) differs from Naive");
        let bound = freeze_bound(&profile);
        let mut prev = 1.0;
        for n in 1..=12 {
            let s = speedup(Strategy::SyncFreeze(n), &profile, &cost, steps).map_err(|e| e.to_string())?;
            check!(s >= prev - 1e-12, "{profile:?} {cost:?}: sync-{n} {s} < {prev}");
            check!(s <= bound + 1e-12, "{profile:?}: sync-{n} {s} above bound {bound}");
            prev = s;
        }
        let a = speedup(Strategy::Async, &profile, &cost, steps).map_err(|e| e.to_string())?;
        check!(a <= bound + 1e-12, "{profile:?}: async {a} above bound {bound}");
    }
    Ok(format!("calibrated sync {sync:.4} async {asy:.4}, 1000-point sweep monotone and bounded"))
}

fn intervention() -> Outcome {
    let original = parse(
        "TASK: put the mushroom in the pot PLAN: 1. move to the mushroom 2. grasp the mushroom \
         SUBTASK REASONING: the gripper is empty SUBTASK: move to the mushroom \
         MOVE REASONING: the mushroom is to the left MOVE: move left \
         GRIPPER POSITION: [[120, 80]] VISIBLE OBJECTS: mushroom [10, 20, 30, 40]",
    )
    .map_err(|e| e.to_string())?;
    let (fixed, horizon) = correct(&original, "no, move right instead", &RuleCorrector).map_err(|e| e.to_string())?;
    check!(horizon == FREEZE_HORIZON && horizon == 5, "horizon {horizon}");
    fixed.validate().map_err(|e| e.to_string())?;
    for section in Section::ALL {
        let same = fixed.section_body(section) == original.section_body(section);
        check!(same == (section != Section::Move), "{section:?} changed = {}", !same);
    }
    check!(fixed.movement.render() == "move right", "MOVE is {}", fixed.movement.render());

    let bad = Edit { section: Section::Move, op: EditOp::Replace { body: "move sideways".into() } };
    check!(
        matches!(apply_edits(&original, &[bad]), Err(InterventionError::InvalidEdit(_))),
        "invalid edit accepted"
    );

    let profile = ChainProfile::from_chain(&fixed, &ecot_core::chain::WordProxyEstimator);
    let cost = CostModel { gen_cost: 1.0, enc_cost: 0.05, overhead: 0.0 };
    let mut freezes = FreezeSchedule::new();
    freezes.push(3, horizon as u64).map_err(|e| e.to_string())?;
    let trace = simulate_with_freezes(Strategy::Naive, &profile, &cost, 20, &freezes).map_err(|e| e.to_string())?;
    check!(trace.action_only_steps() == 5, "{} action-only steps", trace.action_only_steps());
    let frozen: Vec<u64> = trace.steps.iter().filter(|s| s.frozen).map(|s| s.step).collect();
    check!(frozen == [3, 4, 5, 6, 7], "frozen steps {frozen:?}");
    Ok("only MOVE edited, 5 action-only steps".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = default_run(dir.path())?;
    let want = std::fs::read(&base.output).map_err(|e| e.to_string())?;
    let twice = PipelineConfig { output: dir.path().join("twice.jsonl"), parallelism: 4, ..base.clone() };
    run(&twice).map_err(|e| e.to_string())?;
    check!(std::fs::read(&twice.output).map_err(|e| e.to_string())? == want, "second run differs");

    let resumed = PipelineConfig {
        output: dir.path().join("resumed.jsonl"),
        checkpoint: Some(dir.path().join("ckpt.json")),
        parallelism: 2,
        stop_after: Some(3),
        ..base.clone()
    };
    let mut invocations = 0;
    loop {
        invocations += 1;
        let r = run(&resumed).map_err(|e| e.to_string())?;
        if r.complete {
            break;
        }
        // simulate a kill that tore the next record
        let mut out = std::fs::OpenOptions::new().append(true).open(&resumed.output).map_err(|e| e.to_string())?;
        std::io::Write::write_all(&mut out, b"{\"trajectory_id\":").map_err(|e| e.to_string())?;
        check!(invocations < 20, "resume does not progress");
    }
    check!(std::fs::read(&resumed.output).map_err(|e| e.to_string())? == want, "resumed output differs");
    Ok(format!("{} bytes identical across runs and {invocations} resumed invocations", want.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("movement grammar", Duration::from_secs(1), grammar),
        ("movement classifier", Duration::from_secs(5), classifier),
        ("projection calibration", Duration::from_secs(30), ransac),
        ("detection filtering", Duration::from_secs(1), detection_filter),
        ("chain format", Duration::from_secs(60), chain_format),
        ("token budget", Duration::from_secs(60), token_budget),
        ("inference scheduler", Duration::from_secs(10), scheduler),
        ("intervention", Duration::from_secs(1), intervention),
        ("pipeline determinism", Duration::from_secs(120), determinism),
    ];
    // failed checks are reported, not printed as panics
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, budget, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took longer than {budget:?}")),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {}. {name} ({:.2}s): {detail}", k + 1, elapsed.as_secs_f64());
    }
    println!("{} of 9 criteria pass", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
