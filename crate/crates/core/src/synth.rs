//! Synthetic corpora for tests, benchmarks and demos.
//!
//! [`generate`] builds pick-and-place demonstrations seen by a random
//! pinhole camera per trajectory, together with the gripper-detection
//! fixtures a mock backend needs to calibrate them.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotators::{catalog, FixtureSet, GripperResponse, ImageFixture};
use crate::data::{Action, RobotState, Step, Trajectory};
use crate::projection::{project_raw, ProjectionMatrix};

/// Ranges a random look-at camera is drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFamily {
    pub focal: Range<f64>,
    pub width: f64,
    pub height: f64,
    /// Principal point offset from the image center, per axis.
    pub principal_jitter: f64,
    pub distance: Range<f64>,
    /// Radians above the horizontal plane.
    pub elevation: Range<f64>,
    pub look_at: [f64; 3],
}

impl CameraFamily {
    /// A 640x480 camera watching a tabletop workspace.
    pub fn vga_tabletop() -> Self {
        Self {
            focal: 500.0..600.0,
            width: 640.0,
            height: 480.0,
            principal_jitter: 10.0,
            distance: 0.9..1.2,
            elevation: 0.6..1.0,
            look_at: [0.35, 0.0, 0.1],
        }
    }

    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] > 0.0 && px[0] < self.width && px[1] > 0.0 && px[1] < self.height
    }
}

/// Camera at `center` looking at `target` with the image `v` axis pointing
/// down toward the world `-z` direction.
pub fn look_at_camera(k: Matrix3<f64>, center: Vector3<f64>, target: Vector3<f64>) -> Matrix3x4<f64> {
    let fwd = (target - center).normalize();
    let right = fwd.cross(&Vector3::z()).normalize();
    let down = fwd.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let t = -(r * center);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &t);
    k * rt
}

pub fn random_camera<R: Rng>(rng: &mut R, family: &CameraFamily) -> Matrix3x4<f64> {
    let f = rng.random_range(family.focal.clone());
    let j = family.principal_jitter;
    let (cx, cy) = (
        family.width / 2.0 + rng.random_range(-j..=j),
        family.height / 2.0 + rng.random_range(-j..=j),
    );
    let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    let dist = rng.random_range(family.distance.clone());
    let elev: f64 = rng.random_range(family.elevation.clone());
    let azim: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let target = Vector3::from(family.look_at);
    let center = target + Vector3::new(dist * elev.cos() * azim.cos(), dist * elev.cos() * azim.sin(), dist * elev.sin());
    look_at_camera(k, center, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub trajectories: usize,
    pub seed: u64,
    /// How many of the last trajectories get only four gripper detections,
    /// too few to calibrate.
    pub uncalibratable: usize,
    /// A gripper detection is emitted every this many steps.
    pub detection_stride: usize,
    pub outlier_rate: f64,
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trajectories: 10,
            seed: 7,
            uncalibratable: 1,
            detection_stride: 3,
            outlier_rate: 0.1,
            pixel_noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub trajectories: Vec<Trajectory>,
    pub fixtures: FixtureSet,
    /// Ground-truth camera of each trajectory, by id.
    pub cameras: BTreeMap<String, ProjectionMatrix>,
}

const INSTRUCTIONS: &[&str] = &["put the {a} in the {b}", "place the {a} on the {b}", "move the {a} to the {b}"];

/// Waypoints of a pick-and-place, as (position, gripper, steps to reach).
fn waypoints<R: Rng>(rng: &mut R) -> (Vec<([f64; 3], f64, usize)>, [f64; 3]) {
    let start = [rng.random_range(0.25..0.35), rng.random_range(-0.05..0.05), rng.random_range(0.2..0.26)];
    let obj = [rng.random_range(0.3..0.5), rng.random_range(0.08..0.2), 0.03];
    let tgt = [rng.random_range(0.3..0.5), rng.random_range(-0.2..-0.08), 0.07];
    let above = |p: [f64; 3], h: f64| [p[0], p[1], h];
    let plan = vec![
        (above(obj, 0.14), 1.0, rng.random_range(6..9)),
        (obj, 1.0, rng.random_range(4..6)),
        (obj, 0.0, 4),
        (above(obj, 0.16), 0.0, rng.random_range(3..5)),
        (above(tgt, 0.16), 0.0, rng.random_range(6..9)),
        (tgt, 0.0, rng.random_range(3..5)),
        (tgt, 1.0, 4),
        (above(tgt, 0.2), 1.0, rng.random_range(3..5)),
    ];
    (plan, start)
}

fn pick_and_place<R: Rng>(rng: &mut R, id: &str, instruction: String, camera_id: String) -> Trajectory {
    let (plan, start) = waypoints(rng);
    let jitter = Normal::new(0.0, 0.002).expect("valid sigma");
    let mut states = vec![RobotState::from_array([start[0], start[1], start[2], 0.0, 0.0, 0.0, 1.0])];
    let mut pos = start;
    let mut grip = 1.0;
    let mut yaw = 0.0;
    for (k, (to, to_grip, n)) in plan.into_iter().enumerate() {
        let from = pos;
        let from_grip = grip;
        // turn the wrist while carrying
        let yaw_rate = if k == 4 { rng.random_range(-0.03..0.03) } else { 0.0 };
        for s in 1..=n {
            let a = s as f64 / n as f64;
            for d in 0..3 {
                pos[d] = from[d] + a * (to[d] - from[d]);
            }
            grip = from_grip + a * (to_grip - from_grip);
            yaw += yaw_rate;
            let p: Vec<f64> = pos.iter().map(|v| v + jitter.sample(rng)).collect();
            states.push(RobotState::from_array([p[0], p[1], p[2], 0.0, 0.0, yaw, grip]));
        }
        pos = to;
    }
    let steps = states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let next = states.get(i + 1).unwrap_or(s).to_array();
            let cur = s.to_array();
            let mut action = [0.0; 7];
            for d in 0..6 {
                action[d] = next[d] - cur[d];
            }
            action[6] = next[6];
            Step {
                index: i as u64,
                state: *s,
                action: Action(action),
                image_ref: format!("{id}/{i:04}.png"),
                gripper_px: None,
            }
        })
        .collect();
    Trajectory { id: id.to_string(), instruction, camera_id, steps }
}

/// Builds a corpus; identical configs give identical corpora.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let objects = catalog();
    let family = CameraFamily::vga_tabletop();
    let noise = Normal::new(0.0, cfg.pixel_noise.max(1e-12)).expect("valid sigma");
    let mut trajectories = Vec::with_capacity(cfg.trajectories);
    let mut fixtures = FixtureSet::default();
    let mut cameras = BTreeMap::new();
    for k in 0..cfg.trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let a = objects[rng.random_range(0..objects.len())];
        let b = loop {
            let b = objects[rng.random_range(0..objects.len())];
            if b != a {
                break b;
            }
        };
        let template = INSTRUCTIONS[rng.random_range(0..INSTRUCTIONS.len())];
        let instruction = template.replace("{a}", a).replace("{b}", b);
        let id = format!("traj-{k:04}");
        let traj = pick_and_place(&mut rng, &id, instruction, format!("cam-{}", k % 3));

        // Redraw until the whole track is in view.
        let camera = loop {
            let p = random_camera(&mut rng, &family);
            let visible = traj
                .steps
                .iter()
                .all(|s| project_raw(&p, s.state.position()).is_ok_and(|px| family.contains(px)));
            if visible {
                break p;
            }
        };

        let sparse = k + cfg.uncalibratable >= cfg.trajectories;
        let stride = cfg.detection_stride.max(1);
        let detected: Vec<usize> = if sparse {
            (0..traj.steps.len()).step_by(traj.steps.len().div_ceil(4).max(1)).take(4).collect()
        } else {
            (0..traj.steps.len()).step_by(stride).collect()
        };
        for i in detected {
            let step = &traj.steps[i];
            let truth = project_raw(&camera, step.state.position()).expect("visible");
            let point = if rng.random::<f64>() < cfg.outlier_rate {
                [rng.random_range(0.0..family.width), rng.random_range(0.0..family.height)]
            } else {
                [truth[0] + noise.sample(&mut rng), truth[1] + noise.sample(&mut rng)]
            };
            let conf = (rng.random_range(0.6..0.95) * 1000.0f64).round() / 1000.0;
            fixtures.images.insert(
                step.image_ref.clone(),
                ImageFixture {
                    gripper: Some(GripperResponse { point: Some(point), conf }),
                    ..Default::default()
                },
            );
        }
        cameras.insert(id, ProjectionMatrix::new(camera).expect("look-at cameras have full rank"));
        trajectories.push(traj);
    }
    SynthCorpus { trajectories, fixtures, cameras }
}

/// A trajectory moving with constant per-step state change `delta`.
pub fn constant_velocity(id: &str, instruction: &str, steps: usize, delta: [f64; 7]) -> Trajectory {
    let start = [0.3, 0.0, 0.2, 0.0, 0.0, 0.0, 0.5];
    Trajectory {
        id: id.to_string(),
        instruction: instruction.to_string(),
        camera_id: "cam-0".into(),
        steps: (0..steps)
            .map(|i| {
                let mut s = start;
                for d in 0..7 {
                    s[d] += delta[d] * i as f64;
                }
                s[6] = s[6].clamp(0.0, 1.0);
                Step {
                    index: i as u64,
                    state: RobotState::from_array(s),
                    action: Action(delta),
                    image_ref: format!("{id}/{i:04}.png"),
                    gripper_px: None,
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{label_trajectory, DEFAULT_HORIZON, DEFAULT_THRESHOLD};

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let a = generate(&SynthConfig::default());
        let b = generate(&SynthConfig::default());
        assert_eq!(a, b);
        assert_eq!(a.trajectories.len(), 10);
        for t in &a.trajectories {
            t.validate().unwrap();
        }
    }

    #[test]
    fn pick_and_place_closes_then_opens() {
        let c = generate(&SynthConfig { trajectories: 3, ..Default::default() });
        for t in &c.trajectories {
            let labels = label_trajectory(t, DEFAULT_HORIZON, DEFAULT_THRESHOLD).unwrap();
            let text: Vec<String> = labels.iter().map(|l| l.render()).collect();
            let close = text.iter().position(|l| l.contains("close gripper")).expect("closes");
            let open = text.iter().position(|l| l.contains("open gripper")).expect("opens");
            assert!(close < open, "{text:?}");
        }
    }

    #[test]
    fn last_trajectory_is_sparse() {
        let c = generate(&SynthConfig::default());
        let last = c.trajectories.last().unwrap();
        let detections = last.steps.iter().filter(|s| c.fixtures.images.contains_key(&s.image_ref)).count();
        assert_eq!(detections, 4);
    }
}
