//! Frozen agent prompts and the renderers that assemble request messages.
//!
//! Prompt texts live under `prompts/<version>/` and are compiled in, so a
//! given build always produces the same request digests.

use crate::model::{ExecutionHistory, IntermediateOutput, QueryBundle, StructuredTaskRepresentation, Subtask};

pub const PROMPT_VERSION: &str = "v1";

pub const TASK_PARSER: &str = include_str!("../prompts/v1/task_parser.txt");
pub const PROMPT_TEMPLATE: &str = include_str!("../prompts/v1/prompt_template.txt");
pub const PROMPT_OPTIMIZER: &str = include_str!("../prompts/v1/prompt_optimizer.txt");
pub const PROMPT_OPTIMIZER_TOOLS: &str = include_str!("../prompts/v1/prompt_optimizer_tools.txt");
pub const PROMPT_GENERATOR: &str = include_str!("../prompts/v1/prompt_generator.txt");
pub const PLANNER: &str = include_str!("../prompts/v1/planner.txt");
pub const ROLE_DESIGNER: &str = include_str!("../prompts/v1/role_designer.txt");
pub const FOLLOWUP_DESIGNER: &str = include_str!("../prompts/v1/followup_designer.txt");
pub const JUDGE: &str = include_str!("../prompts/v1/judge.txt");
pub const SCORER: &str = include_str!("../prompts/v1/scorer.txt");
pub const INFERENCE_SUFFIX: &str = include_str!("../prompts/v1/inference_suffix.txt");

/// Routing keys of the fixed agents. Inference agents route by their role name.
pub mod keys {
    pub const TASK_PARSER: &str = "task_parser";
    pub const PROMPT_TEMPLATE: &str = "prompt_template";
    pub const PROMPT_OPTIMIZER: &str = "prompt_optimizer";
    pub const PROMPT_GENERATOR: &str = "prompt_generator";
    pub const PLANNER: &str = "planner";
    pub const ROLE_DESIGNER: &str = "role_designer";
    pub const FOLLOWUP_DESIGNER: &str = "followup_designer";
    pub const JUDGE: &str = "judge";
    pub const SCORER: &str = "scorer";

    pub const REFINEMENT: [&str; 4] = [TASK_PARSER, PROMPT_TEMPLATE, PROMPT_OPTIMIZER, PROMPT_GENERATOR];
}

/// Section headers every initial prompt frame must carry.
pub const TEMPLATE_SECTIONS: [&str; 4] = ["## Task", "## Objectives", "## Inputs", "## Output Format"];

/// Maximum length of the history block shown to the planner.
pub const HISTORY_CHAR_CAP: usize = 2000;

pub fn representation_block(f: &StructuredTaskRepresentation) -> String {
    format!("Structured task representation:\n{}", f.to_kv_text())
}

pub fn optimizer_system_prompt(code_interpreter: bool) -> String {
    if code_interpreter {
        format!("{PROMPT_OPTIMIZER}\n{PROMPT_OPTIMIZER_TOOLS}")
    } else {
        PROMPT_OPTIMIZER.to_string()
    }
}

/// Numbered `subtask -> answer` lines, dropping the oldest lines first so the
/// block stays within [`HISTORY_CHAR_CAP`] characters.
pub fn render_history(history: &ExecutionHistory) -> String {
    if history.is_empty() {
        return "(no subtasks completed yet)".to_string();
    }
    let lines: Vec<String> = history
        .entries
        .iter()
        .map(|e| {
            format!(
                "{}. {} -> {}",
                e.subtask.index,
                single_line(&e.subtask.description),
                single_line(&e.answer)
            )
        })
        .collect();
    let mut start = 0;
    let total = |from: usize| lines[from..].iter().map(|l| l.chars().count() + 1).sum::<usize>() - 1;
    while start + 1 < lines.len() && total(start) > HISTORY_CHAR_CAP {
        start += 1;
    }
    let rendered = lines[start..].join("\n");
    let len = rendered.chars().count();
    if len > HISTORY_CHAR_CAP {
        rendered.chars().skip(len - HISTORY_CHAR_CAP).collect()
    } else {
        rendered
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn subtask_block(subtask: &Subtask) -> String {
    format!("Subtask {}: {}", subtask.index, subtask.description)
}

pub fn refined_prompt_block(bundle: &QueryBundle) -> String {
    format!("Overall task (refined prompt):\n{}", bundle.refined_prompt)
}

/// Shared context every agent working on a subtask receives: the subtask,
/// the refined prompt and the task representation.
pub fn subtask_context(subtask: &Subtask, bundle: &QueryBundle) -> Vec<String> {
    vec![
        subtask_block(subtask),
        refined_prompt_block(bundle),
        representation_block(&bundle.representation),
    ]
}

pub fn outputs_block(outputs: &[&IntermediateOutput]) -> String {
    let mut s = String::from("Outputs of the agents that acted before you:");
    for o in outputs {
        s.push_str(&format!("\n[{}] ({})\n{}", o.producer.role_name, o.label, o.content));
    }
    s
}

pub fn evaluation_messages(output_text: &str, subtask: &Subtask, bundle: &QueryBundle) -> Vec<String> {
    vec![
        subtask_block(subtask),
        refined_prompt_block(bundle),
        format!("Output under evaluation:\n{output_text}"),
    ]
}
