#![allow(dead_code)]
//! Oracles and fixtures shared by the integration tests.

use std::path::Path;

use ecot_core::chain::{Layout, ObjectBox, ReasoningChain};
use ecot_core::data::write_dataset;
use ecot_core::motion::MovementLabel;
use ecot_core::pipeline::PipelineConfig;
use ecot_core::projection::{project_raw, Correspondence};
use ecot_core::synth::{generate, random_camera, CameraFamily, SynthConfig};
use nalgebra::Matrix3x4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// The 54 labels the reference dataset uses most.
pub const COMMON_LABELS: &str = include_str!("../fixtures/common_labels.txt");

/// Written straight from the template, independent of the library: each
/// axis difference is thresholded, then the non-empty blocks are joined.
pub fn oracle(a: &[f64; 7], b: &[f64; 7], threshold: f64) -> String {
    let dir = |i: usize| {
        let d = b[i] - a[i];
        if d > threshold {
            1
        } else if d < -threshold {
            -1
        } else {
            0
        }
    };
    let pick = |i: usize, pos: &'static str, neg: &'static str| match dir(i) {
        1 => Some(pos),
        -1 => Some(neg),
        _ => None,
    };
    let moves: Vec<&str> = [pick(0, "forward", "backward"), pick(1, "left", "right"), pick(2, "up", "down")]
        .into_iter()
        .flatten()
        .collect();
    let mut blocks = Vec::new();
    if !moves.is_empty() {
        blocks.push(format!("move {}", moves.join(" ")));
    }
    if let Some(t) = pick(4, "up", "down") {
        blocks.push(format!("tilt {t}"));
    }
    if let Some(r) = pick(5, "counterclockwise", "clockwise") {
        blocks.push(format!("rotate {r}"));
    }
    if let Some(g) = pick(6, "open", "close") {
        blocks.push(format!("{g} gripper"));
    }
    if blocks.is_empty() {
        "stop".to_string()
    } else {
        blocks.join(", ")
    }
}

pub fn random_delta(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => 0.03,
        2 => -0.03,
        3 => rng.random_range(-0.035..0.035),
        _ => rng.random_range(-0.2..0.2),
    }
}

const WORDS: &[&str] = &[
    "the", "pot", "mushroom", "move", "left", "grasp", "towel", "so", "it", "is", "near", "red", "cup", "then",
    "plan", "task", "subtask", "up", "x", "1", "42", "3.5", "a-b", "it's",
];

pub fn text(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn random_chain(rng: &mut ChaCha8Rng, layout: Layout) -> ReasoningChain {
    let plan_len = rng.random_range(0..6);
    let grip_len = if rng.random_bool(0.5) { 1 } else { 5 };
    let objects = (0..rng.random_range(0..6))
        .map(|_| ObjectBox {
            label: text(rng, 1, 3),
            bbox: [0; 4].map(|_| rng.random_range(-50..2000)),
        })
        .collect();
    ReasoningChain {
        task: text(rng, 0, 8),
        plan: (0..plan_len).map(|_| text(rng, 1, 6)).collect(),
        subtask_reason: text(rng, 0, 30),
        subtask: text(rng, 0, 6),
        move_reason: text(rng, 0, 30),
        movement: MovementLabel::from_index(rng.random_range(0..729)).unwrap(),
        gripper: (0..grip_len).map(|_| [rng.random_range(-20..700), rng.random_range(-20..500)]).collect(),
        objects,
        layout,
    }
}

/// Writes the default synthetic corpus into `dir` and returns a config
/// reading it with the mock backend.
pub fn setup(dir: &Path) -> PipelineConfig {
    let corpus = generate(&SynthConfig::default());
    let dataset = dir.join("dataset.jsonl");
    write_dataset(&corpus.trajectories, &dataset).unwrap();
    let fixtures = dir.join("fixtures.json");
    corpus.fixtures.save(&fixtures).unwrap();
    PipelineConfig {
        dataset,
        fixtures: Some(fixtures),
        output: dir.join("out.jsonl"),
        ..Default::default()
    }
}

/// A 4096x3072 camera with a 60 degree field of view, 0.8 to 1.0 m from
/// the workspace.
pub fn twelve_mp() -> CameraFamily {
    CameraFamily {
        focal: 3300.0..3700.0,
        width: 4096.0,
        height: 3072.0,
        principal_jitter: 20.0,
        distance: 0.8..1.0,
        elevation: 0.5..1.0,
        look_at: [0.0, 0.0, 0.0],
    }
}

/// A random camera and `n` visible correspondences, every `k % 10 < 3`
/// replaced by a uniform outlier, the rest with Gaussian pixel noise.
pub fn noisy_scene(seed: u64, family: &CameraFamily, n: usize, sigma: f64) -> (Matrix3x4<f64>, Vec<Correspondence>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = random_camera(&mut rng, family);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut corrs = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for k in 0..n {
        let (x, uv) = loop {
            let x = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.0..0.4)];
            let uv = project_raw(&camera, x).unwrap();
            if family.contains(uv) {
                break (x, uv);
            }
        };
        let inlier = k % 10 >= 3;
        let px = if inlier {
            [uv[0] + noise.sample(&mut rng), uv[1] + noise.sample(&mut rng)]
        } else {
            [rng.random_range(0.0..family.width), rng.random_range(0.0..family.height)]
        };
        corrs.push(Correspondence::new(x, px));
        truth.push(inlier);
    }
    (camera, corrs, truth)
}
