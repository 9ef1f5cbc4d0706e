//! Deterministic in-process backend.
//!
//! Every response is a pure function of the request body (including its
//! seed) and the loaded fixtures. Explicit per-image fixtures win; anything
//! not covered by a fixture is generated from a hash of the request.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::wire::{
    endpoints, DescribeRequest, DescribeResponse, DetectRequest, DetectResponse, GripperRequest,
    GripperResponse, PlanAnnotation, PlanRequest, PlanStep, WireDetection,
};
use super::{Annotator, AnnotatorError};
use crate::hash::{request_hash, SplitMix64};
use crate::motion::{Component, Direction, MovementLabel};

const OBJECTS: &[&str] = &[
    "red cup",
    "blue bowl",
    "green sponge",
    "yellow towel",
    "silver pot",
    "wooden spoon",
    "orange carrot",
    "purple eggplant",
    "small mushroom",
    "metal spatula",
    "plastic corn",
    "white plate",
    "toy banana",
    "toy sink",
    "screwdriver",
];

/// Background surfaces. They are detected with low text confidence, so the
/// default filter drops them.
const SURFACES: &[&str] = &["wooden table", "kitchen counter", "stove top"];

const RELATIONS: &[&str] = &["to the left of", "to the right of", "in front of", "behind", "next to"];

const IMAGE_W: f64 = 640.0;
const IMAGE_H: f64 = 480.0;

/// Object names the mock recognizes in captions and instructions.
pub fn catalog() -> &'static [&'static str] {
    OBJECTS
}

/// Fixed responses for specific images.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<WireDetection>>,
    /// With a fixture present, a missing gripper means "not detected".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gripper: Option<GripperResponse>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSet {
    #[serde(default)]
    pub images: BTreeMap<String, ImageFixture>,
}

impl FixtureSet {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut text = serde_json::to_string(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: FixtureSet,
}

impl MockBackend {
    pub fn new(fixtures: FixtureSet) -> Self {
        Self { fixtures }
    }

    fn fixture(&self, image_ref: &str) -> Option<&ImageFixture> {
        self.fixtures.images.get(image_ref)
    }
}

fn is_word_boundary(text: &str, at: usize, len: usize) -> bool {
    let before = text[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
    let after = text[at + len..].chars().next().is_none_or(|c| !c.is_alphanumeric());
    before && after
}

fn find_word(text: &str, word: &str) -> Option<usize> {
    text.match_indices(word)
        .map(|(at, _)| at)
        .find(|at| is_word_boundary(text, *at, word.len()))
}

/// Catalog entries mentioned in `text`, by full name or by head noun,
/// ordered by first mention.
fn mentioned<'a>(text: &str, names: &[&'a str]) -> Vec<&'a str> {
    let lower = text.to_lowercase();
    let mut hits: Vec<(usize, &str)> = names
        .iter()
        .filter_map(|name| {
            let noun = name.rsplit(' ').next().unwrap_or(name);
            find_word(&lower, name)
                .or_else(|| find_word(&lower, noun))
                .map(|at| (at, *name))
        })
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, n)| n).collect()
}

fn pick_new<'a>(rng: &mut SplitMix64, pool: &[&'a str], taken: &[&str]) -> &'a str {
    let free: Vec<&str> = pool.iter().copied().filter(|n| !taken.contains(n)).collect();
    rng.pick(&free)
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Lowercased, single-spaced instruction without trailing punctuation.
pub(crate) fn normalize_instruction(instruction: &str) -> String {
    let words: Vec<&str> = instruction.split_whitespace().collect();
    words.join(" ").to_lowercase().trim_end_matches(['.', '!', '?']).to_string()
}

impl Annotator for MockBackend {
    fn describe(&self, req: &DescribeRequest) -> Result<DescribeResponse, AnnotatorError> {
        if let Some(caption) = self.fixture(&req.image_ref).and_then(|f| f.caption.clone()) {
            return Ok(DescribeResponse { caption });
        }
        let mut rng = SplitMix64::new(request_hash(endpoints::DESCRIBE, req));
        let instruction = req.instruction.as_deref().unwrap_or("");
        let mut objects = mentioned(instruction, OBJECTS);
        objects.truncate(2);
        let scene_size = 4 + rng.below(3);
        while objects.len() < scene_size {
            let next = pick_new(&mut rng, OBJECTS, &objects);
            objects.push(next);
        }
        let surface = mentioned(instruction, SURFACES)
            .first()
            .copied()
            .unwrap_or_else(|| *rng.pick(SURFACES));
        let (a, b, c) = (objects[0], objects[1], objects[2]);
        let r1 = rng.pick(RELATIONS);
        let r2 = rng.pick(RELATIONS);
        let list = objects
            .iter()
            .map(|o| format!("a {o}"))
            .collect::<Vec<_>>();
        let (last, rest) = list.split_last().expect("at least three objects");
        let caption = format!(
            "{} and {last} are on the {surface}. the {a} is {r1} the {b}, and the {c} is {r2} the {a}.",
            rest.join(", ")
        );
        Ok(DescribeResponse { caption })
    }

    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, AnnotatorError> {
        if req.text.trim().is_empty() {
            return Err(AnnotatorError::refusal(422, "empty_text", "detection text is empty"));
        }
        if let Some(dets) = self.fixture(&req.image_ref).and_then(|f| f.detections.clone()) {
            return Ok(DetectResponse { detections: dets });
        }
        let mut jitter = SplitMix64::new(request_hash(endpoints::DETECT, req));
        let mut names = mentioned(&req.text, OBJECTS);
        names.extend(mentioned(&req.text, SURFACES));
        let mut detections = Vec::with_capacity(names.len());
        for name in names {
            // Placement depends only on (name, text, seed), so an object stays
            // put across the frames of one trajectory; `jitter` varies per frame.
            let base = json!({"label": name, "text": req.text, "seed": req.seed});
            let mut place = SplitMix64::new(request_hash("/mock/place", &base));
            let cx = place.range(80.0, IMAGE_W - 80.0) + jitter.range(-3.0, 3.0);
            let cy = place.range(80.0, IMAGE_H - 80.0) + jitter.range(-3.0, 3.0);
            let w = place.range(40.0, 140.0) + jitter.range(-3.0, 3.0);
            let h = place.range(40.0, 140.0) + jitter.range(-3.0, 3.0);
            let surface = SURFACES.contains(&name);
            let weak = jitter.next_f64() < 0.1;
            let box_conf = match (surface, weak) {
                (true, _) => jitter.range(0.35, 0.8),
                (false, true) => jitter.range(0.1, 0.3),
                (false, false) => jitter.range(0.45, 0.9),
            };
            let text_conf = if surface { jitter.range(0.1, 0.2) } else { jitter.range(0.25, 0.6) };
            let x1 = round_to((cx - w / 2.0).max(0.0), 0.1);
            let y1 = round_to((cy - h / 2.0).max(0.0), 0.1);
            let x2 = round_to((cx + w / 2.0).min(IMAGE_W), 0.1);
            let y2 = round_to((cy + h / 2.0).min(IMAGE_H), 0.1);
            detections.push(WireDetection {
                label: name.to_string(),
                bbox: [x1, y1, x2, y2],
                box_conf: round_to(box_conf, 0.001),
                text_conf: round_to(text_conf, 0.001),
            });
        }
        Ok(DetectResponse { detections })
    }

    fn detect_gripper(&self, req: &GripperRequest) -> Result<GripperResponse, AnnotatorError> {
        Ok(self
            .fixture(&req.image_ref)
            .and_then(|f| f.gripper.clone())
            .unwrap_or(GripperResponse::NONE))
    }

    fn plan(&self, req: &PlanRequest) -> Result<PlanAnnotation, AnnotatorError> {
        if req.moves.len() != req.steps {
            return Err(AnnotatorError::refusal(
                422,
                "length_mismatch",
                format!("{} moves for {} steps", req.moves.len(), req.steps),
            ));
        }
        if req.steps == 0 {
            return Err(AnnotatorError::refusal(422, "empty_trajectory", "no steps to plan"));
        }
        let labels = req
            .moves
            .iter()
            .enumerate()
            .map(|(k, m)| {
                MovementLabel::parse(m)
                    .map_err(|_| AnnotatorError::refusal(422, "invalid_move", format!("moves[{k}] = {m:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rng = SplitMix64::new(request_hash(endpoints::PLAN, req));
        Ok(plan_from_moves(&req.instruction, &req.caption, &labels, &mut rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Approach,
    Grasp,
    Carry,
    Release,
    Retreat,
    Open,
    Whole,
}

/// Splits the episode wherever the gripper component changes; a final
/// free-motion segment after a release is folded into the release.
fn segment(labels: &[MovementLabel]) -> Vec<(Phase, usize, usize)> {
    let grip = |t: usize| labels[t].get(Component::Gripper);
    let mut runs: Vec<(Direction, usize, usize)> = Vec::new();
    for t in 0..labels.len() {
        match runs.last_mut() {
            Some(run) if run.0 == grip(t) => run.2 = t + 1,
            _ => runs.push((grip(t), t, t + 1)),
        }
    }
    if runs.len() == 1 && runs[0].0 == Direction::Neutral {
        return vec![(Phase::Whole, 0, labels.len())];
    }
    let mut holding = None::<bool>;
    let mut out: Vec<(Phase, usize, usize)> = Vec::new();
    for (k, (dir, start, end)) in runs.iter().copied().enumerate() {
        let phase = match dir {
            Direction::Negative => {
                holding = Some(true);
                Phase::Grasp
            }
            Direction::Positive => {
                let released = holding == Some(true);
                holding = Some(false);
                if released {
                    Phase::Release
                } else {
                    Phase::Open
                }
            }
            Direction::Neutral => match holding {
                None => Phase::Approach,
                Some(true) => Phase::Carry,
                Some(false) => Phase::Retreat,
            },
        };
        let last = k + 1 == runs.len();
        match out.last_mut() {
            Some(prev) if last && phase == Phase::Retreat && prev.0 == Phase::Release => prev.2 = end,
            _ => out.push((phase, start, end)),
        }
    }
    out
}

struct Names<'a> {
    task: String,
    obj: &'a str,
    target: &'a str,
}

fn subtask_name(phase: Phase, n: &Names) -> String {
    let Names { task, obj, target } = n;
    match phase {
        Phase::Approach => format!("move to the {obj}"),
        Phase::Grasp => format!("grasp the {obj}"),
        Phase::Carry => format!("move the {obj} to the {target}"),
        Phase::Release => format!("release the {obj}"),
        Phase::Retreat => format!("move away from the {target}"),
        Phase::Open => "open the gripper".to_string(),
        Phase::Whole => task.clone(),
    }
}

fn subtask_reason(phase: Phase, n: &Names, rng: &mut SplitMix64) -> String {
    let Names { task, obj, target } = n;
    let options: [String; 2] = match phase {
        Phase::Approach => [
            format!("the {obj} has not been picked up yet, so the gripper first has to travel over to the {obj} and line itself up with it before it can close around it"),
            format!("to {task} the robot needs to hold the {obj}, but the gripper is still empty and away from it, so the first thing to do is to reach the {obj}"),
        ],
        Phase::Grasp => [
            format!("the gripper is now positioned around the {obj}, so closing the fingers will secure it and let the robot carry it over to the {target} afterwards"),
            format!("the {obj} sits between the open fingers of the gripper, which means the robot can close the gripper now and take a firm hold of the {obj}"),
        ],
        Phase::Carry => [
            format!("the {obj} is held firmly in the gripper, so the next step is to carry it across the scene until it is right above the {target}"),
            format!("the robot has grasped the {obj} but it is still far from the {target}, so it has to transport the {obj} there while keeping the gripper closed"),
        ],
        Phase::Release => [
            format!("the {obj} is now above the {target}, so opening the gripper will set it down in the right place and finish the task"),
            format!("the gripper has brought the {obj} to the {target}, and letting go of it now leaves the {obj} where the task asks for it to be"),
        ],
        Phase::Retreat => [
            format!("the {obj} has already been released, so the gripper should back away from the {target} and leave the scene clear"),
            format!("nothing is held any more, so the robot moves the gripper away from the {target} before doing anything else"),
        ],
        Phase::Open => [
            format!("the gripper has to be open before it can take hold of the {obj}, so it opens first"),
            format!("an open gripper is needed to reach around the {obj}, so the robot opens it before moving on"),
        ],
        Phase::Whole => [
            format!("the task only asks for a motion of the gripper, so the robot keeps moving in the way needed to {task}"),
            format!("nothing has to be grasped to {task}, so the whole episode is a single motion of the gripper"),
        ],
    };
    rng.pick(&options).clone()
}

fn move_reason(label: &MovementLabel, phase: Phase, n: &Names, rng: &mut SplitMix64) -> String {
    let Names { obj, target, .. } = n;
    let state = match phase {
        Phase::Approach | Phase::Open | Phase::Whole => format!("the gripper is still empty and the {obj} has not been touched"),
        Phase::Grasp => format!("the fingers are closing around the {obj} while the arm stays close to it"),
        Phase::Carry => format!("the {obj} is held between the closed fingers and must not be dropped on the way"),
        Phase::Release => format!("the fingers are opening so the {obj} comes to rest on the {target}"),
        Phase::Retreat => format!("the {obj} is already on the {target} and the gripper is empty again"),
    };
    if label.is_stop() {
        let options = [
            "the gripper is already where it needs to be for the current subtask, so it should hold still for a moment".to_string(),
            format!("no further motion is needed right now, so the gripper stays in place near the {obj}"),
        ];
        return format!("{state}. {}", rng.pick(&options));
    }
    let goal = match phase {
        Phase::Approach | Phase::Open => format!("the {obj}"),
        Phase::Grasp => format!("a secure grip on the {obj}"),
        Phase::Carry | Phase::Release => format!("the {target}"),
        Phase::Retreat => "a clear position away from the objects".to_string(),
        Phase::Whole => "the end of the demonstrated motion".to_string(),
    };
    let options = [
        format!("the gripper should {label} because that is the direction that gets it closer to {goal} from where it is now"),
        format!("moving this way brings the gripper toward {goal}, so the next motion is to {label}"),
        format!("from its current position the gripper has to {label} to make progress toward {goal}"),
    ];
    format!("{state}. {}", rng.pick(&options))
}

fn plan_from_moves(instruction: &str, caption: &str, labels: &[MovementLabel], rng: &mut SplitMix64) -> PlanAnnotation {
    let normalized = normalize_instruction(instruction);
    let task = if normalized.is_empty() {
        "complete the demonstrated task".to_string()
    } else {
        normalized
    };
    let in_task = mentioned(instruction, OBJECTS);
    let in_caption = mentioned(caption, OBJECTS);
    let obj = in_task.first().or(in_caption.first()).copied().unwrap_or("object");
    let target = in_task
        .get(1)
        .copied()
        .or_else(|| mentioned(instruction, SURFACES).first().copied())
        .unwrap_or("target location");
    let names = Names { task, obj, target };

    let segments = segment(labels);
    let plan: Vec<String> = segments.iter().map(|(p, _, _)| subtask_name(*p, &names)).collect();
    let mut per_step = Vec::with_capacity(labels.len());
    for (k, (phase, start, end)) in segments.iter().copied().enumerate() {
        let after = match plan.get(k + 1) {
            Some(next) => format!("once this is done the robot can {next}"),
            None => "once this is done nothing else is left to do for the task".to_string(),
        };
        for label in &labels[start..end] {
            per_step.push(PlanStep {
                subtask: k,
                subtask_reason: format!("{}. {after}", subtask_reason(phase, &names, rng)),
                move_reason: move_reason(label, phase, &names, rng),
            });
        }
    }
    PlanAnnotation { task: names.task, plan, per_step }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(text: &[&str]) -> Vec<String> {
        text.iter().map(|s| s.to_string()).collect()
    }

    fn plan_req(moves: &[&str]) -> PlanRequest {
        PlanRequest {
            instruction: "put the red cup in the toy sink".into(),
            caption: String::new(),
            moves: labels(moves),
            steps: moves.len(),
            seed: 7,
        }
    }

    #[test]
    fn single_stop_is_one_subtask() {
        let p = MockBackend::default().plan(&plan_req(&["stop"])).unwrap();
        assert_eq!(p.plan, vec!["put the red cup in the toy sink".to_string()]);
        assert_eq!(p.per_step.len(), 1);
        p.validate(1).unwrap();
    }

    #[test]
    fn pick_and_place_segments() {
        let moves = [
            "move forward left",
            "move forward left, close gripper",
            "close gripper",
            "move up",
            "move right",
            "move right, open gripper",
            "open gripper",
            "move up",
        ];
        let p = MockBackend::default().plan(&plan_req(&moves)).unwrap();
        assert_eq!(
            p.plan,
            vec![
                "move to the red cup",
                "grasp the red cup",
                "move the red cup to the toy sink",
                "release the red cup",
            ]
        );
        let idx: Vec<usize> = p.per_step.iter().map(|s| s.subtask).collect();
        assert_eq!(idx, vec![0, 1, 1, 2, 2, 3, 3, 3]);
        p.validate(moves.len()).unwrap();
    }

    #[test]
    fn plan_rejects_length_mismatch_and_bad_moves() {
        let mut req = plan_req(&["stop", "stop"]);
        req.steps = 3;
        let err = MockBackend::default().plan(&req).unwrap_err();
        assert!(matches!(err, AnnotatorError::BackendRefusal { status: 422, ref error, .. } if error == "length_mismatch"));
        let err = MockBackend::default().plan(&plan_req(&["fly away"])).unwrap_err();
        assert!(matches!(err, AnnotatorError::BackendRefusal { ref error, .. } if error == "invalid_move"));
    }

    #[test]
    fn describe_is_deterministic_and_mentions_task_objects() {
        let m = MockBackend::default();
        let req = DescribeRequest::new("img/0", Some("put the blue bowl on the white plate"), 3);
        let a = m.describe(&req).unwrap();
        assert_eq!(a, m.describe(&req).unwrap());
        assert!(a.caption.contains("blue bowl") && a.caption.contains("white plate"));
        let other = m.describe(&DescribeRequest::new("img/0", Some("put the blue bowl on the white plate"), 4)).unwrap();
        assert!(other.caption.contains("blue bowl"));
    }

    #[test]
    fn detect_finds_mentions_and_keeps_objects_in_place() {
        let m = MockBackend::default();
        let text = "put the red cup in the toy sink a red cup is on the wooden table.";
        let a = m.detect(&DetectRequest { image_ref: "f0".into(), text: text.into(), seed: 1 }).unwrap();
        let b = m.detect(&DetectRequest { image_ref: "f1".into(), text: text.into(), seed: 1 }).unwrap();
        let names: Vec<&str> = a.detections.iter().map(|d| d.label.as_str()).collect();
        assert_eq!(names, vec!["red cup", "toy sink", "wooden table"]);
        for (x, y) in a.detections.iter().zip(&b.detections) {
            for k in 0..4 {
                assert!((x.bbox[k] - y.bbox[k]).abs() <= 12.0);
            }
        }
        assert!(a.boxes().is_ok());
        // the surface never survives the default filter
        assert!(a.detections[2].text_conf <= 0.2);
    }

    #[test]
    fn empty_detection_text_is_refused() {
        let m = MockBackend::default();
        let err = m.detect(&DetectRequest { image_ref: "x".into(), text: " ".into(), seed: 0 });
        assert!(err.is_err());
    }

    #[test]
    fn fixtures_take_precedence() {
        let mut fx = FixtureSet::default();
        fx.images.insert(
            "scene".into(),
            ImageFixture {
                caption: Some("an empty table".into()),
                detections: Some(Vec::new()),
                gripper: Some(GripperResponse { point: Some([128.0, 96.0]), conf: 0.9 }),
            },
        );
        fx.images.insert("bare".into(), ImageFixture::default());
        let m = MockBackend::new(fx);
        assert_eq!(m.describe(&DescribeRequest::new("scene", None, 0)).unwrap().caption, "an empty table");
        let d = m.detect(&DetectRequest { image_ref: "scene".into(), text: "red cup".into(), seed: 0 }).unwrap();
        assert!(d.detections.is_empty());
        let g = m.detect_gripper(&GripperRequest { image_ref: "scene".into(), seed: 0 }).unwrap();
        assert_eq!(g.detection().unwrap().point, [128.0, 96.0]);
        let none = m.detect_gripper(&GripperRequest { image_ref: "bare".into(), seed: 0 }).unwrap();
        assert_eq!(none, GripperResponse::NONE);
    }

    #[test]
    fn mentions_match_head_nouns_on_word_boundaries() {
        assert_eq!(mentioned("pick up the cup", OBJECTS), vec!["red cup"]);
        assert!(mentioned("a cupboard", OBJECTS).is_empty());
    }
}
