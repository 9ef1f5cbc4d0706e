//! Per-step reasoning chains.
//!
//! A chain is rendered as tagged sections joined by single spaces:
//!
//! ```text
//! TASK: <task> PLAN: 1. <a> 2. <b> SUBTASK REASONING: <why> SUBTASK: <subtask>
//! MOVE REASONING: <why> MOVE: <label> GRIPPER POSITION: [[u, v]]
//! VISIBLE OBJECTS: cup [10, 20, 50, 80], bowl [100, 40, 180, 120]
//! ```
//!
//! (shown wrapped; the real string is one line). The frozen-box layout moves
//! `VISIBLE OBJECTS` directly after the plan so it can be held fixed together
//! with the high-level sections. An empty section is written as its bare tag.

mod assemble;
mod format;
mod tokens;

use serde::{Deserialize, Serialize};

use crate::motion::MovementLabel;

pub use assemble::{assemble, sanitize_label, sanitize_text, AssemblyInput, FUTURE_GRIPPER_STEPS};
pub use format::{parse, serialize};
pub(crate) use format::serialize_prefix;
pub use tokens::{
    count_action_only, count_tokens, ChainProfile, TokenBudget, TokenEstimator, WordProxyEstimator,
    ACTION_TOKENS,
};

/// Gripper list length when future positions are predicted.
pub const GRIPPER_WITH_FUTURE: usize = 1 + FUTURE_GRIPPER_STEPS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("parse error at byte {position}: expected {expected}")]
    Parse { position: usize, expected: String },
    #[error("invalid {field}: {detail}")]
    InvalidText { field: String, detail: String },
    #[error("length mismatch: {what} has {got} entries, trajectory has {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

impl ChainError {
    fn parse(position: usize, expected: impl Into<String>) -> Self {
        ChainError::Parse {
            position,
            expected: expected.into(),
        }
    }

    fn invalid(field: impl Into<String>, detail: impl Into<String>) -> Self {
        ChainError::InvalidText {
            field: field.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Standard,
    FrozenBbox,
}

impl Layout {
    pub fn order(self) -> [Section; 8] {
        use Section::*;
        match self {
            Layout::Standard => [
                Task,
                Plan,
                SubtaskReasoning,
                Subtask,
                MoveReasoning,
                Move,
                Gripper,
                Objects,
            ],
            Layout::FrozenBbox => [
                Task,
                Plan,
                Objects,
                SubtaskReasoning,
                Subtask,
                MoveReasoning,
                Move,
                Gripper,
            ],
        }
    }

    /// Sections held fixed between high-level regenerations.
    pub fn high_level_sections(self) -> &'static [Section] {
        match self {
            Layout::Standard => &[Section::Task, Section::Plan],
            Layout::FrozenBbox => &[Section::Task, Section::Plan, Section::Objects],
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(Layout::Standard),
            "frozen_bbox" | "frozen-bbox" => Ok(Layout::FrozenBbox),
            other => Err(format!("unknown layout `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Task,
    Plan,
    SubtaskReasoning,
    Subtask,
    MoveReasoning,
    Move,
    Gripper,
    Objects,
}

impl Section {
    pub const ALL: [Section; 8] = [
        Section::Task,
        Section::Plan,
        Section::SubtaskReasoning,
        Section::Subtask,
        Section::MoveReasoning,
        Section::Move,
        Section::Gripper,
        Section::Objects,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Section::Task => "TASK:",
            Section::Plan => "PLAN:",
            Section::SubtaskReasoning => "SUBTASK REASONING:",
            Section::Subtask => "SUBTASK:",
            Section::MoveReasoning => "MOVE REASONING:",
            Section::Move => "MOVE:",
            Section::Gripper => "GRIPPER POSITION:",
            Section::Objects => "VISIBLE OBJECTS:",
        }
    }
}

impl std::str::FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().trim_end_matches(':').to_ascii_lowercase().replace([' ', '-'], "_");
        Ok(match norm.as_str() {
            "task" => Section::Task,
            "plan" => Section::Plan,
            "subtask_reasoning" => Section::SubtaskReasoning,
            "subtask" => Section::Subtask,
            "move_reasoning" => Section::MoveReasoning,
            "move" => Section::Move,
            "gripper" | "gripper_position" => Section::Gripper,
            "objects" | "visible_objects" => Section::Objects,
            other => return Err(format!("unknown section `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub label: String,
    /// `[x1, y1, x2, y2]` in integer pixels.
    pub bbox: [i64; 4],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningChain {
    pub task: String,
    pub plan: Vec<String>,
    pub subtask_reason: String,
    pub subtask: String,
    pub move_reason: String,
    pub movement: MovementLabel,
    /// Current end-effector pixel, optionally followed by four future ones.
    pub gripper: Vec<[i64; 2]>,
    pub objects: Vec<ObjectBox>,
    pub layout: Layout,
}

/// A word that reads as a section tag: two or more capitals then a colon.
pub(crate) fn is_tag_word(word: &str) -> bool {
    match word.strip_suffix(':') {
        Some(head) => head.len() >= 2 && head.bytes().all(|b| b.is_ascii_uppercase()),
        None => false,
    }
}

/// Free text is one line, trimmed, single-spaced, and free of tag-like words.
pub(crate) fn check_text(field: &str, text: &str) -> Result<(), ChainError> {
    if text.chars().any(|c| c.is_control()) {
        return Err(ChainError::invalid(field, "contains control characters"));
    }
    if text != text.trim() {
        return Err(ChainError::invalid(field, "leading or trailing whitespace"));
    }
    if text.contains("  ") || text.chars().any(|c| c.is_whitespace() && c != ' ') {
        return Err(ChainError::invalid(field, "irregular whitespace"));
    }
    if let Some(w) = text.split(' ').find(|w| is_tag_word(w)) {
        return Err(ChainError::invalid(field, format!("contains tag-like word `{w}`")));
    }
    Ok(())
}

fn is_plan_number(word: &str) -> bool {
    match word.strip_suffix('.') {
        Some(n) => !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()),
        None => false,
    }
}

impl ReasoningChain {
    /// Checks every invariant the canonical string form relies on.
    pub fn validate(&self) -> Result<(), ChainError> {
        check_text("task", &self.task)?;
        for (k, item) in self.plan.iter().enumerate() {
            let field = format!("plan[{k}]");
            if item.is_empty() {
                return Err(ChainError::invalid(field, "empty plan step"));
            }
            check_text(&field, item)?;
            if item.split(' ').any(is_plan_number) {
                return Err(ChainError::invalid(field, "contains a plan-number word"));
            }
        }
        check_text("subtask_reason", &self.subtask_reason)?;
        check_text("subtask", &self.subtask)?;
        check_text("move_reason", &self.move_reason)?;
        if !matches!(self.gripper.len(), 1 | GRIPPER_WITH_FUTURE) {
            return Err(ChainError::invalid(
                "gripper",
                format!("expected 1 or {GRIPPER_WITH_FUTURE} positions, got {}", self.gripper.len()),
            ));
        }
        for (k, o) in self.objects.iter().enumerate() {
            let field = format!("objects[{k}]");
            if o.label.is_empty() {
                return Err(ChainError::invalid(field, "empty label"));
            }
            check_text(&field, &o.label)?;
            if o.label.contains(['[', ']', ',']) {
                return Err(ChainError::invalid(field, "label contains `[`, `]` or `,`"));
            }
        }
        Ok(())
    }

    pub fn with_layout(&self, layout: Layout) -> Self {
        Self {
            layout,
            ..self.clone()
        }
    }

    /// The canonical body of one section (without its tag).
    pub fn section_body(&self, section: Section) -> String {
        format::render_body(self, section)
    }

    pub fn to_canonical_string(&self) -> String {
        serialize(self)
    }
}

impl std::fmt::Display for ReasoningChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&serialize(self))
    }
}

impl std::str::FromStr for ReasoningChain {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_words() {
        assert!(is_tag_word("TASK:"));
        assert!(is_tag_word("FOO:"));
        assert!(!is_tag_word("A:"));
        assert!(!is_tag_word("Task:"));
        assert!(!is_tag_word("TASK"));
        assert!(!is_tag_word("TASK:x"));
    }

    #[test]
    fn text_rules() {
        assert!(check_text("t", "pick up the cup").is_ok());
        assert!(check_text("t", "").is_ok());
        assert!(check_text("t", " lead").is_err());
        assert!(check_text("t", "two  spaces").is_err());
        assert!(check_text("t", "tab\there").is_err());
        assert!(check_text("t", "hidden PLAN: tag").is_err());
    }

    #[test]
    fn layouts_permute_the_same_sections() {
        let mut a = Layout::Standard.order().to_vec();
        let mut b = Layout::FrozenBbox.order().to_vec();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(a, Section::ALL.to_vec());
    }

    #[test]
    fn section_names_parse() {
        assert_eq!("MOVE:".parse::<Section>().unwrap(), Section::Move);
        assert_eq!("visible objects".parse::<Section>().unwrap(), Section::Objects);
        assert!("colour".parse::<Section>().is_err());
    }
}
