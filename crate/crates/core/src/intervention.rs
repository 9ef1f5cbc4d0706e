//! Natural-language corrections of a chain and the freeze that follows them.
//!
//! A [`Corrector`] turns feedback into section edits; [`correct`] applies
//! and validates them. The corrected chain is then held fixed for
//! [`FREEZE_HORIZON`] steps by [`apply_freeze`].

use serde::{Deserialize, Serialize};

use crate::annotators::{AnnotatorError, CorrectRequest, HttpBackend};
use crate::chain::{self, sanitize_text, ReasoningChain, Section};
use crate::motion::MovementLabel;
use crate::scheduler::{FreezeSchedule, SchedulerError};

/// Steps a corrected chain is held fixed.
pub const FREEZE_HORIZON: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterventionError {
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("corrector unavailable: {0}")]
    BackendUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum EditOp {
    /// New canonical body of the section.
    Replace { body: String },
    /// Insert into a list section (plan items, objects, gripper points).
    Insert { index: usize, item: String },
    /// Remove one list item, or clear the whole section.
    Delete { index: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub section: Section,
    #[serde(flatten)]
    pub op: EditOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Correction {
    pub feedback: String,
    pub edits: Vec<Edit>,
}

pub trait Corrector: Send + Sync {
    fn propose(&self, chain: &ReasoningChain, feedback: &str) -> Result<Correction, InterventionError>;
}

fn invalid(msg: impl Into<String>) -> InterventionError {
    InterventionError::InvalidEdit(msg.into())
}

/// Splits a list-section body into its items.
fn list_items(chain: &ReasoningChain, section: Section) -> Result<Vec<String>, InterventionError> {
    Ok(match section {
        Section::Plan => chain.plan.clone(),
        Section::Objects => chain
            .objects
            .iter()
            .map(|o| {
                let [x1, y1, x2, y2] = o.bbox;
                format!("{} [{x1}, {y1}, {x2}, {y2}]", o.label)
            })
            .collect(),
        Section::Gripper => chain.gripper.iter().map(|[u, v]| format!("[{u}, {v}]")).collect(),
        other => return Err(invalid(format!("{} is not a list section", other.tag()))),
    })
}

fn join_items(section: Section, items: &[String]) -> String {
    match section {
        Section::Plan => items
            .iter()
            .enumerate()
            .map(|(k, s)| format!("{}. {s}", k + 1))
            .collect::<Vec<_>>()
            .join(" "),
        Section::Gripper => format!("[{}]", items.join(", ")),
        _ => items.join(", "),
    }
}

/// Rebuilds `chain` with one section body swapped, through the strict parser.
fn with_body(chain: &ReasoningChain, section: Section, body: &str) -> Result<ReasoningChain, InterventionError> {
    let text = chain
        .layout
        .order()
        .iter()
        .map(|s| {
            let b = if *s == section { body.to_string() } else { chain.section_body(*s) };
            if b.is_empty() {
                s.tag().to_string()
            } else {
                format!("{} {b}", s.tag())
            }
        })
        .collect::<Vec<_>>()
        .join(" ");
    let out = chain::parse(&text).map_err(|e| invalid(format!("{}: {e}", section.tag())))?;
    if out.layout != chain.layout {
        return Err(invalid("edit changed the section layout"));
    }
    Ok(out)
}

/// Applies `edits` in order. Every intermediate chain must be valid.
pub fn apply_edits(chain: &ReasoningChain, edits: &[Edit]) -> Result<ReasoningChain, InterventionError> {
    let mut current = chain.clone();
    for edit in edits {
        let s = edit.section;
        current = match &edit.op {
            EditOp::Replace { body } => with_body(&current, s, body)?,
            EditOp::Insert { index, item } => {
                let mut items = list_items(&current, s)?;
                if *index > items.len() {
                    return Err(invalid(format!("insert index {index} past {} items", items.len())));
                }
                items.insert(*index, item.clone());
                with_body(&current, s, &join_items(s, &items))?
            }
            EditOp::Delete { index: None } => with_body(&current, s, "")?,
            EditOp::Delete { index: Some(i) } => {
                let mut items = list_items(&current, s)?;
                if *i >= items.len() {
                    return Err(invalid(format!("delete index {i} out of {} items", items.len())));
                }
                items.remove(*i);
                with_body(&current, s, &join_items(s, &items))?
            }
        };
    }
    Ok(current)
}

/// Applies the corrector's edits and returns the new chain together with
/// the number of steps it must be held fixed.
pub fn correct(
    chain: &ReasoningChain,
    feedback: &str,
    corrector: &dyn Corrector,
) -> Result<(ReasoningChain, usize), InterventionError> {
    chain.validate().map_err(|e| invalid(format!("input chain: {e}")))?;
    if feedback.trim().is_empty() {
        return Ok((chain.clone(), FREEZE_HORIZON));
    }
    let correction = corrector.propose(chain, feedback)?;
    let out = apply_edits(chain, &correction.edits)?;
    Ok((out, FREEZE_HORIZON))
}

/// Keyword corrector. It recognises, in order of precedence:
///
/// * `the task is to ...` which replaces TASK,
/// * the longest run of words that is a movement label (`move right
///   instead` gives `move right`), which replaces MOVE,
/// * gripper verbs (`release`, `let go`, `drop` open it; `grab`, `grasp`
///   close it) and `stop`/`halt`, which replace MOVE.
///
/// Feedback it does not understand yields no edits.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleCorrector;

fn words_of(feedback: &str) -> Vec<String> {
    feedback
        .split_whitespace()
        .map(|w| w.to_lowercase().trim_matches(|c: char| !c.is_alphanumeric() && c != ',').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn longest_label(words: &[String]) -> Option<MovementLabel> {
    for len in (1..=words.len()).rev() {
        for start in 0..=words.len() - len {
            let span = words[start..start + len].join(" ");
            if let Ok(label) = span.trim_end_matches(',').parse::<MovementLabel>() {
                return Some(label);
            }
        }
    }
    None
}

impl Corrector for RuleCorrector {
    fn propose(&self, _chain: &ReasoningChain, feedback: &str) -> Result<Correction, InterventionError> {
        let mut correction = Correction { feedback: feedback.to_string(), edits: Vec::new() };
        let lower = feedback.to_lowercase();
        let words = words_of(feedback);

        for marker in ["the task is to ", "your task is to ", "the task is "] {
            if let Some(at) = lower.find(marker) {
                let task = sanitize_text(lower[at + marker.len()..].trim_end_matches(['.', '!', '?']));
                if !task.is_empty() {
                    correction.edits.push(Edit { section: Section::Task, op: EditOp::Replace { body: task } });
                    return Ok(correction);
                }
            }
        }

        let has = |w: &str| words.iter().any(|x| x.trim_end_matches(',') == w);
        let phrase = |p: &str| format!(" {} ", words.join(" ")).contains(&format!(" {p} "));
        let label = longest_label(&words).or_else(|| {
            if has("release") || has("drop") || phrase("let go") {
                Some("open gripper".parse().expect("valid label"))
            } else if has("grab") || has("grasp") {
                Some("close gripper".parse().expect("valid label"))
            } else if has("halt") || has("freeze") {
                Some(MovementLabel::STOP)
            } else {
                None
            }
        });
        if let Some(label) = label {
            correction.edits.push(Edit { section: Section::Move, op: EditOp::Replace { body: label.render() } });
        }
        Ok(correction)
    }
}

/// Edits that turn `original` into the chain in `rewritten`: one `Replace`
/// per section whose body differs.
pub fn correction_from_rewrite(original: &ReasoningChain, rewritten: &str, feedback: &str) -> Result<Correction, InterventionError> {
    let new = chain::parse(rewritten.trim()).map_err(|e| invalid(format!("corrector output: {e}")))?;
    if new.layout != original.layout {
        return Err(invalid("corrector output uses a different section layout"));
    }
    let edits = original
        .layout
        .order()
        .iter()
        .filter_map(|s| {
            let body = new.section_body(*s);
            (body != original.section_body(*s)).then_some(Edit { section: *s, op: EditOp::Replace { body } })
        })
        .collect();
    Ok(Correction { feedback: feedback.to_string(), edits })
}

/// Corrector backed by a language model behind the annotator service.
#[derive(Debug)]
pub struct RemoteCorrector {
    pub backend: HttpBackend,
    pub seed: u64,
}

impl Corrector for RemoteCorrector {
    fn propose(&self, chain: &ReasoningChain, feedback: &str) -> Result<Correction, InterventionError> {
        let req = CorrectRequest { chain: chain.to_canonical_string(), feedback: feedback.to_string(), seed: self.seed };
        match self.backend.correct(&req) {
            Ok(resp) => correction_from_rewrite(chain, &resp.chain, feedback),
            Err(AnnotatorError::Protocol(m)) => Err(invalid(format!("corrector response: {m}"))),
            Err(e) => Err(InterventionError::BackendUnavailable(e.to_string())),
        }
    }
}

/// Execution-side state: the current step and which chain, if any, is
/// held fixed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutorState {
    pub step: u64,
    pub frozen_chain: Option<ReasoningChain>,
    pub freezes: FreezeSchedule,
}

impl ExecutorState {
    pub fn is_frozen(&self) -> bool {
        self.freezes.is_frozen(self.step)
    }

    /// The chain to condition on this step, if one is frozen.
    pub fn active_chain(&self) -> Option<&ReasoningChain> {
        self.frozen_chain.as_ref().filter(|_| self.is_frozen())
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

/// Holds `chain` fixed from the current step for `horizon` steps. A later
/// freeze replaces any window still running.
pub fn apply_freeze(mut state: ExecutorState, chain: ReasoningChain, horizon: usize) -> Result<ExecutorState, SchedulerError> {
    state.freezes.push(state.step, horizon as u64)?;
    state.frozen_chain = Some(chain);
    Ok(state)
}
