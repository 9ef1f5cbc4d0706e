//! JSON request and response bodies of the annotator protocol.
//!
//! | endpoint        | request                                         | response |
//! |-----------------|-------------------------------------------------|----------|
//! | `/v1/describe`  | `{image_ref, instruction?, seed}`               | `{caption}` |
//! | `/v1/detect`    | `{image_ref, text, seed}`                       | `{detections: [{label, box, box_conf, text_conf}]}` |
//! | `/v1/gripper`   | `{image_ref, seed}`                             | `{point: [u, v] \| null, conf}` |
//! | `/v1/plan`      | `{instruction, caption, moves, steps, seed}`    | `{task, plan, per_step: [{subtask, subtask_reason, move_reason}]}` |
//! | `/v1/correct`   | `{chain, feedback, seed}`                       | `{chain}` |
//!
//! Errors are a non-2xx status with `{error, detail}`.

use serde::{Deserialize, Serialize};

use super::AnnotatorError;
use crate::data::{instruction_is_usable, BoundingBox};

pub mod endpoints {
    pub const DESCRIBE: &str = "/v1/describe";
    pub const DETECT: &str = "/v1/detect";
    pub const GRIPPER: &str = "/v1/gripper";
    pub const PLAN: &str = "/v1/plan";
    pub const CORRECT: &str = "/v1/correct";
    pub const HEALTH: &str = "/v1/health";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeRequest {
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl DescribeRequest {
    /// Drops instructions without a space; those are usually dataset noise.
    pub fn new(image_ref: impl Into<String>, instruction: Option<&str>, seed: u64) -> Self {
        Self {
            image_ref: image_ref.into(),
            instruction: instruction.filter(|i| instruction_is_usable(i)).map(str::to_string),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub image_ref: String,
    pub text: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub box_conf: f64,
    pub text_conf: f64,
}

impl From<&BoundingBox> for WireDetection {
    fn from(b: &BoundingBox) -> Self {
        Self {
            label: b.label.clone(),
            bbox: [b.x1, b.y1, b.x2, b.y2],
            box_conf: b.box_conf,
            text_conf: b.text_conf,
        }
    }
}

impl From<&WireDetection> for BoundingBox {
    fn from(w: &WireDetection) -> Self {
        let [x1, y1, x2, y2] = w.bbox;
        BoundingBox {
            label: w.label.clone(),
            x1,
            y1,
            x2,
            y2,
            box_conf: w.box_conf,
            text_conf: w.text_conf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

impl DetectResponse {
    pub fn from_boxes(boxes: &[BoundingBox]) -> Self {
        Self {
            detections: boxes.iter().map(WireDetection::from).collect(),
        }
    }

    /// Converts to boxes, rejecting any that break box invariants.
    pub fn boxes(&self) -> Result<Vec<BoundingBox>, AnnotatorError> {
        self.detections
            .iter()
            .map(|w| {
                let b = BoundingBox::from(w);
                b.validate().map_err(|v| AnnotatorError::Protocol(format!("detection: {v}")))?;
                Ok(b)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperRequest {
    pub image_ref: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperResponse {
    pub point: Option<[f64; 2]>,
    #[serde(default)]
    pub conf: f64,
}

impl GripperResponse {
    pub const NONE: GripperResponse = GripperResponse { point: None, conf: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub instruction: String,
    pub caption: String,
    /// One movement label per step.
    pub moves: Vec<String>,
    /// Trajectory length; must equal `moves.len()`.
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    /// Index into [`PlanAnnotation::plan`].
    pub subtask: usize,
    pub subtask_reason: String,
    pub move_reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAnnotation {
    pub task: String,
    pub plan: Vec<String>,
    pub per_step: Vec<PlanStep>,
}

impl PlanAnnotation {
    pub fn validate(&self, steps: usize) -> Result<(), AnnotatorError> {
        let bad = |m: String| Err(AnnotatorError::MalformedPlan(m));
        if self.plan.is_empty() {
            return bad("plan has no subtasks".into());
        }
        if let Some(k) = self.plan.iter().position(|p| p.trim().is_empty()) {
            return bad(format!("plan[{k}] is blank"));
        }
        if self.per_step.len() != steps {
            return bad(format!("per_step has {} entries, trajectory has {steps}", self.per_step.len()));
        }
        if let Some(k) = self.per_step.iter().position(|s| s.subtask >= self.plan.len()) {
            return bad(format!(
                "per_step[{k}].subtask = {} is out of range for {} subtasks",
                self.per_step[k].subtask,
                self.plan.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectRequest {
    pub chain: String,
    pub feedback: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectResponse {
    pub chain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}
