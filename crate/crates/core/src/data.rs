//! Trajectory datasets and their JSON-lines file format.
//!
//! One trajectory per line:
//!
//! ```text
//! {"id":"t0","instruction":"put the cup in the bowl","camera_id":"cam0",
//!  "steps":[{"i":0,"state":[x,y,z,roll,pitch,yaw,gripper],"action":[..7..],
//!            "image_ref":"t0/000.jpg","gripper_px":null}]}
//! ```
//!
//! Floats are written with the shortest decimal that round-trips, so writing
//! a dataset twice yields identical bytes.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Number of values in a proprioceptive state vector.
pub const STATE_DIM: usize = 7;
/// Number of values in an action vector.
pub const ACTION_DIM: usize = 7;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("schema violation on line {line} at `{field}`: {detail}")]
    SchemaViolation {
        line: usize,
        field: String,
        detail: String,
    },
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

/// A broken invariant, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub detail: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            detail: detail.into(),
        }
    }

    fn prefixed(self, prefix: &str) -> Self {
        Self {
            field: format!("{prefix}.{}", self.field),
            detail: self.detail,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.detail)
    }
}

impl std::error::Error for Violation {}

/// End-effector pose plus gripper opening (0 closed, 1 open).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub gripper: f64,
}

const STATE_FIELDS: [&str; STATE_DIM] = ["x", "y", "z", "roll", "pitch", "yaw", "gripper"];

impl RobotState {
    pub fn from_array(v: [f64; STATE_DIM]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            z: v[2],
            roll: v[3],
            pitch: v[4],
            yaw: v[5],
            gripper: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.x,
            self.y,
            self.z,
            self.roll,
            self.pitch,
            self.yaw,
            self.gripper,
        ]
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<(), Violation> {
        for (name, v) in STATE_FIELDS.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(Violation::new(*name, format!("non-finite value {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gripper) {
            return Err(Violation::new(
                "gripper",
                format!("{} outside [0, 1]", self.gripper),
            ));
        }
        Ok(())
    }
}

/// End-effector velocity (6) followed by the gripper command (1).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub fn from_slice(values: &[f64]) -> Result<Self, Violation> {
        let arr: [f64; ACTION_DIM] = values.try_into().map_err(|_| {
            Violation::new(
                "action",
                format!("expected {ACTION_DIM} values, got {}", values.len()),
            )
        })?;
        let action = Action(arr);
        action.validate()?;
        Ok(action)
    }

    pub fn validate(&self) -> Result<(), Violation> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Violation::new(format!("action[{k}]"), "non-finite value")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub index: u64,
    pub state: RobotState,
    pub action: Action,
    /// Path or content id of the camera frame; never the pixels themselves.
    pub image_ref: String,
    /// End-effector pixel position, filled in by projection fitting.
    pub gripper_px: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub instruction: String,
    pub camera_id: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Instructions without a single space are treated as labelling noise.
    pub fn has_usable_instruction(&self) -> bool {
        instruction_is_usable(&self.instruction)
    }

    pub fn states(&self) -> impl Iterator<Item = &RobotState> {
        self.steps.iter().map(|s| &s.state)
    }

    pub fn validate(&self) -> Result<(), Violation> {
        if self.steps.is_empty() {
            return Err(Violation::new("steps", "trajectory has no steps"));
        }
        let mut prev: Option<u64> = None;
        for (k, step) in self.steps.iter().enumerate() {
            let at = format!("steps[{k}]");
            if let Some(p) = prev {
                if step.index <= p {
                    return Err(Violation::new(
                        format!("{at}.i"),
                        format!("index {} not greater than previous {p}", step.index),
                    ));
                }
            }
            prev = Some(step.index);
            step.state
                .validate()
                .map_err(|v| v.prefixed(&format!("{at}.state")))?;
            step.action
                .validate()
                .map_err(|v| v.prefixed(&at))?;
            if let Some(px) = step.gripper_px {
                if !px.iter().all(|v| v.is_finite()) {
                    return Err(Violation::new(
                        format!("{at}.gripper_px"),
                        "non-finite pixel",
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn instruction_is_usable(instruction: &str) -> bool {
    instruction.contains(' ')
}

/// Axis-aligned detection box in pixels with detector confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub label: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub box_conf: f64,
    pub text_conf: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<(), Violation> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(Violation::new("box", "non-finite coordinate"));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Violation::new("box", "expected x1 < x2 and y1 < y2"));
        }
        for (name, c) in [("box_conf", self.box_conf), ("text_conf", self.text_conf)] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Violation::new(name, format!("{c} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

// ---- file format ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    i: u64,
    state: Vec<f64>,
    action: Vec<f64>,
    image_ref: String,
    gripper_px: Option<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    id: String,
    instruction: String,
    camera_id: String,
    steps: Vec<StepRecord>,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            id: t.id.clone(),
            instruction: t.instruction.clone(),
            camera_id: t.camera_id.clone(),
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord {
                    i: s.index,
                    state: s.state.to_array().to_vec(),
                    action: s.action.0.to_vec(),
                    image_ref: s.image_ref.clone(),
                    gripper_px: s.gripper_px,
                })
                .collect(),
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = Violation;

    fn try_from(r: TrajectoryRecord) -> Result<Self, Violation> {
        let mut steps = Vec::with_capacity(r.steps.len());
        for (k, s) in r.steps.into_iter().enumerate() {
            let state: [f64; STATE_DIM] = s.state.as_slice().try_into().map_err(|_| {
                Violation::new(
                    format!("steps[{k}].state"),
                    format!("expected {STATE_DIM} values, got {}", s.state.len()),
                )
            })?;
            let action = Action::from_slice(&s.action)
                .map_err(|v| v.prefixed(&format!("steps[{k}]")))?;
            steps.push(Step {
                index: s.i,
                state: RobotState::from_array(state),
                action,
                image_ref: s.image_ref,
                gripper_px: s.gripper_px,
            });
        }
        let traj = Trajectory {
            id: r.id,
            instruction: r.instruction,
            camera_id: r.camera_id,
            steps,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// Canonical single-line encoding of one trajectory (no trailing newline).
pub fn encode_trajectory(traj: &Trajectory) -> String {
    serde_json::to_string(&TrajectoryRecord::from(traj)).expect("trajectory records always encode")
}

/// Parses one JSON line. `line` is only used for error reporting.
pub fn decode_trajectory(text: &str, line: usize) -> Result<Trajectory, DataError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let record: TrajectoryRecord =
        serde_path_to_error::deserialize(de).map_err(|e| DataError::SchemaViolation {
            line,
            field: e.path().to_string(),
            detail: e.into_inner().to_string(),
        })?;
    Trajectory::try_from(record).map_err(|v| DataError::SchemaViolation {
        line,
        field: v.field,
        detail: v.detail,
    })
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Trajectory>, DataError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_trajectory(&line, k + 1)?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(trajs: &[Trajectory], mut writer: W) -> Result<(), DataError> {
    for (k, t) in trajs.iter().enumerate() {
        t.validate().map_err(|v| DataError::SchemaViolation {
            line: k + 1,
            field: v.field,
            detail: v.detail,
        })?;
        writer.write_all(encode_trajectory(t).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Trajectory>, DataError> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_dataset(trajs: &[Trajectory], path: impl AsRef<Path>) -> Result<(), DataError> {
    write_jsonl(trajs, BufWriter::new(File::create(path)?))
}
