//! Building per-step chains from the annotation results of one trajectory.

use super::{is_tag_word, ChainError, Layout, ObjectBox, ReasoningChain};
use crate::annotators::PlanAnnotation;
use crate::data::{BoundingBox, Trajectory};
use crate::motion::MovementLabel;

/// Future gripper positions appended when prediction is enabled.
pub const FUTURE_GRIPPER_STEPS: usize = 4;

/// Everything known about one trajectory, one entry per step.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyInput<'a> {
    /// Must have `gripper_px` filled on every step.
    pub traj: &'a Trajectory,
    /// Filtered detections per step.
    pub boxes: &'a [Vec<BoundingBox>],
    pub labels: &'a [MovementLabel],
    pub plan: &'a PlanAnnotation,
    pub layout: Layout,
    pub future_gripper: bool,
}

/// Single-line, single-spaced text with tag-like words lowercased, so that
/// backend output can never break the chain format.
pub fn sanitize_text(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            let w: String = w.chars().filter(|c| !c.is_control()).collect();
            if is_tag_word(&w) {
                w.to_lowercase()
            } else {
                w
            }
        })
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sanitized text with the list punctuation the object section relies on
/// turned into spaces. Never empty.
pub fn sanitize_label(label: &str) -> String {
    let cleaned = sanitize_text(&label.replace(['[', ']', ','], " "));
    if cleaned.is_empty() {
        "object".to_string()
    } else {
        cleaned
    }
}

/// Plan items additionally lose the trailing dot of number-like words
/// (`3.` becomes `3`) so they cannot be confused with plan numbering.
fn sanitize_plan_item(item: &str) -> String {
    let cleaned = sanitize_text(item)
        .split(' ')
        .map(|w| match w.strip_suffix('.') {
            Some(n) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => n.to_string(),
            _ => w.to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ");
    if cleaned.is_empty() {
        "continue".to_string()
    } else {
        cleaned
    }
}

fn px(v: [f64; 2]) -> [i64; 2] {
    [v[0].round() as i64, v[1].round() as i64]
}

/// One chain per step of `input.traj`.
pub fn assemble(input: &AssemblyInput) -> Result<Vec<ReasoningChain>, ChainError> {
    let n = input.traj.steps.len();
    let check = |what: &'static str, got: usize| {
        if got == n {
            Ok(())
        } else {
            Err(ChainError::LengthMismatch { what, expected: n, got })
        }
    };
    check("boxes", input.boxes.len())?;
    check("labels", input.labels.len())?;
    check("plan.per_step", input.plan.per_step.len())?;
    let track: Vec<[i64; 2]> = input.traj.steps.iter().filter_map(|s| s.gripper_px).map(px).collect();
    check("gripper_px", track.len())?;

    let task = sanitize_text(&input.plan.task);
    let plan: Vec<String> = input.plan.plan.iter().map(|p| sanitize_plan_item(p)).collect();
    let mut chains = Vec::with_capacity(n);
    for t in 0..n {
        let step = &input.plan.per_step[t];
        let subtask = plan.get(step.subtask).cloned().ok_or_else(|| ChainError::InvalidText {
            field: format!("plan.per_step[{t}].subtask"),
            detail: format!("index {} out of range", step.subtask),
        })?;
        let gripper = if input.future_gripper {
            (0..=FUTURE_GRIPPER_STEPS).map(|k| track[(t + k).min(n - 1)]).collect()
        } else {
            vec![track[t]]
        };
        let objects = input.boxes[t]
            .iter()
            .map(|b| ObjectBox {
                label: sanitize_label(&b.label),
                bbox: [b.x1, b.y1, b.x2, b.y2].map(|v| v.round() as i64),
            })
            .collect();
        let chain = ReasoningChain {
            task: task.clone(),
            plan: plan.clone(),
            subtask_reason: sanitize_text(&step.subtask_reason),
            subtask,
            move_reason: sanitize_text(&step.move_reason),
            movement: input.labels[t],
            gripper,
            objects,
            layout: input.layout,
        };
        chain.validate()?;
        chains.push(chain);
    }
    Ok(chains)
}
