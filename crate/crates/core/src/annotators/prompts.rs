//! Versioned prompt templates for model-backed annotators.
//!
//! The templates are also installed as plain text files under
//! `assets/prompts/` so an external service can load them directly.

use super::wire::PlanRequest;
use crate::data::instruction_is_usable;

pub const PROMPT_VERSION: &str = "v1";

pub const DESCRIBE: &str = include_str!("../../assets/prompts/describe.v1.txt");
pub const DESCRIBE_TASK_PREFIX: &str = include_str!("../../assets/prompts/describe_task_prefix.v1.txt");
pub const PLAN: &str = include_str!("../../assets/prompts/plan.v1.txt");
pub const CORRECT: &str = include_str!("../../assets/prompts/correct.v1.txt");

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.trim_end().to_string(), |s, (k, v)| s.replace(&format!("{{{k}}}"), v))
}

/// Captioning prompt; the task sentence is included only for usable
/// instructions.
pub fn describe_prompt(instruction: Option<&str>) -> String {
    let base = DESCRIBE.trim_end();
    match instruction.filter(|i| instruction_is_usable(i)) {
        Some(task) => format!("{} {base}", fill(DESCRIBE_TASK_PREFIX, &[("task", task.trim())])),
        None => base.to_string(),
    }
}

pub fn plan_prompt(req: &PlanRequest) -> String {
    let moves: Vec<String> = req.moves.iter().enumerate().map(|(k, m)| format!("{k}: {m}")).collect();
    fill(
        PLAN,
        &[
            ("instruction", &req.instruction),
            ("caption", &req.caption),
            ("steps", &req.steps.to_string()),
            ("moves", &moves.join("\n")),
        ],
    )
}

pub fn correct_prompt(chain: &str, feedback: &str) -> String {
    fill(CORRECT, &[("chain", chain), ("feedback", feedback)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_prefix_only_for_usable_instructions() {
        let with = describe_prompt(Some("put the cup in the sink"));
        assert!(with.starts_with("The robot task is: put the cup in the sink. Briefly describe"));
        let without = describe_prompt(Some("stack"));
        assert!(without.starts_with("Briefly describe"));
        assert!(!without.contains("robot task"));
        assert_eq!(describe_prompt(None), without);
    }

    #[test]
    fn plan_prompt_lists_every_move() {
        let req = PlanRequest {
            instruction: "wipe the table".into(),
            caption: "a towel on a table".into(),
            moves: vec!["stop".into(), "move left".into()],
            steps: 2,
            seed: 0,
        };
        let p = plan_prompt(&req);
        assert!(p.contains("0: stop\n1: move left"));
        assert!(p.contains("exactly 2 entries"));
        assert!(!p.contains('{'));
    }

    #[test]
    fn correct_prompt_fills_both_slots() {
        let p = correct_prompt("TASK: x", "go left");
        assert!(p.ends_with("Feedback: go left\nChain: TASK: x"));
    }
}
