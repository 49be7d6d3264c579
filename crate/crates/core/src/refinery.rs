//! Four-agent prompt refinement chain: task parser, prompt template,
//! prompt optimizer, prompt generator. Stages always run in that order and the
//! parsed task representation is handed unchanged to the three later stages.

use serde::Deserialize;

use crate::error::{EngineError, Result};
use crate::gateway::{extract_json_block, Gateway, GatewayError};
use crate::model::{QueryBundle, StructuredTaskRepresentation};
use crate::prompts::{self, keys};

pub struct PromptRefinery<'a> {
    gateway: &'a Gateway,
    code_interpreter: bool,
}

#[derive(Deserialize)]
struct ParsedTask {
    #[serde(default)]
    task_type: String,
    #[serde(default)]
    core_intent: String,
    #[serde(default)]
    key_details: Vec<String>,
}

impl<'a> PromptRefinery<'a> {
    pub fn new(gateway: &'a Gateway, code_interpreter: bool) -> Self {
        Self { gateway, code_interpreter }
    }

    pub fn refine(&self, raw_query: &str) -> Result<QueryBundle> {
        let representation = self.parse_task(raw_query)?;
        let template = self.build_template(raw_query, &representation)?;
        let optimized = self.optimize_prompt(&template, &representation)?;
        let refined = self.synthesize_prompt(&optimized, &representation)?;
        Ok(QueryBundle {
            raw_query: raw_query.to_string(),
            initial_template: Some(template),
            optimized_prompt: Some(optimized),
            refined_prompt: refined,
            representation,
        })
    }

    pub fn parse_task(&self, raw_query: &str) -> Result<StructuredTaskRepresentation> {
        if raw_query.trim().is_empty() {
            return Err(EngineError::EmptyField("raw_query".into()));
        }
        let request = self.gateway.request(prompts::TASK_PARSER, vec![raw_query.to_string()]);
        let parsed: ParsedTask = self.gateway.complete_parsed(keys::TASK_PARSER, &request, |text| {
            let value = extract_json_block(text)?;
            serde_json::from_value::<ParsedTask>(value)
                .map_err(|e| GatewayError::malformed(format!("task representation: {e}")))
        })?;
        let f = StructuredTaskRepresentation {
            task_type: parsed.task_type.trim().to_string(),
            core_intent: parsed.core_intent.trim().to_string(),
            key_details: parsed
                .key_details
                .into_iter()
                .map(|d| d.trim().to_string())
                .filter(|d| !d.is_empty())
                .collect(),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn build_template(&self, raw_query: &str, f: &StructuredTaskRepresentation) -> Result<String> {
        let request = self.gateway.request(
            prompts::PROMPT_TEMPLATE,
            vec![format!("Raw query:\n{raw_query}"), prompts::representation_block(f)],
        );
        self.gateway.complete_parsed(keys::PROMPT_TEMPLATE, &request, |text| {
            match prompts::TEMPLATE_SECTIONS.iter().find(|m| !text.contains(**m)) {
                Some(missing) => Err(EngineError::MissingSection(missing.to_string())),
                None => Ok(text.to_string()),
            }
        })
    }

    pub fn optimize_prompt(&self, q0: &str, f: &StructuredTaskRepresentation) -> Result<String> {
        let request = self.gateway.request(
            prompts::optimizer_system_prompt(self.code_interpreter),
            vec![format!("Prompt frame:\n{q0}"), prompts::representation_block(f)],
        );
        let text = self.gateway.complete(keys::PROMPT_OPTIMIZER, &request)?.text;
        non_empty(text, "optimized_prompt")
    }

    pub fn synthesize_prompt(&self, q_opt: &str, f: &StructuredTaskRepresentation) -> Result<String> {
        let request = self.gateway.request(
            prompts::PROMPT_GENERATOR,
            vec![format!("Optimized prompt:\n{q_opt}"), prompts::representation_block(f)],
        );
        let text = self.gateway.complete(keys::PROMPT_GENERATOR, &request)?.text;
        non_empty(text, "refined_prompt")
    }
}

fn non_empty(text: String, field: &str) -> Result<String> {
    if text.trim().is_empty() {
        Err(EngineError::EmptyField(field.to_string()))
    } else {
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Decoding, GatewayErrorKind, ScriptedBackend};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    const TEMPLATE: &str = "## Task\nt\n## Objectives\no\n## Inputs\ni\n## Output Format\nf";
    const P1: &str = r#"{"task_type":"code generation","core_intent":"reverse a string","key_details":["return a function"]}"#;

    fn setup(script: &[(&str, &[&str])]) -> (Arc<ScriptedBackend>, Gateway) {
        let map: BTreeMap<String, Vec<String>> = script
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect();
        let backend = Arc::new(ScriptedBackend::new(map));
        let gw = Gateway::new(backend.clone(), Decoding::default());
        (backend, gw)
    }

    fn f() -> StructuredTaskRepresentation {
        serde_json::from_str(P1).unwrap()
    }

    #[test]
    fn parse_task_pass_through() {
        let (_, gw) = setup(&[("task_parser", &[P1])]);
        assert_eq!(PromptRefinery::new(&gw, false).parse_task("reverse").unwrap(), f());
    }

    #[test]
    fn parse_task_missing_intent_is_empty_field() {
        let (_, gw) = setup(&[("task_parser", &[r#"{"task_type":"x","key_details":["d"]}"#])]);
        let err = PromptRefinery::new(&gw, false).parse_task("q").unwrap_err();
        assert_eq!(err, EngineError::EmptyField("core_intent".into()));
    }

    #[test]
    fn parse_task_from_prose() {
        let reply = format!("Sure! Here is the analysis:\n{P1}\nHope that helps.");
        let (_, gw) = setup(&[("task_parser", &[&reply])]);
        assert_eq!(PromptRefinery::new(&gw, false).parse_task("q").unwrap(), f());
    }

    #[test]
    fn parse_task_malformed_after_reask() {
        let (_, gw) = setup(&[("task_parser", &["no json", "still none"])]);
        let err = PromptRefinery::new(&gw, false).parse_task("q").unwrap_err();
        assert!(matches!(err, EngineError::Gateway(ref g) if g.kind == GatewayErrorKind::MalformedResponse));
        assert_eq!(gw.call_count(), 2);
    }

    #[test]
    fn template_checks_sections() {
        let (_, gw) = setup(&[("prompt_template", &[TEMPLATE])]);
        assert_eq!(PromptRefinery::new(&gw, false).build_template("q", &f()).unwrap(), TEMPLATE);

        let three = "## Task\n## Objectives\n## Inputs\n";
        let (_, gw) = setup(&[("prompt_template", &[three, three])]);
        let err = PromptRefinery::new(&gw, false).build_template("q", &f()).unwrap_err();
        assert_eq!(err, EngineError::MissingSection("## Output Format".into()));
    }

    #[test]
    fn optimizer_tool_clause_follows_flag() {
        for flag in [false, true] {
            let (backend, gw) = setup(&[("prompt_optimizer", &["QOPT"])]);
            assert_eq!(PromptRefinery::new(&gw, flag).optimize_prompt(TEMPLATE, &f()).unwrap(), "QOPT");
            let (_, req) = &backend.received()[0];
            assert_eq!(req.system_prompt.contains("code interpreter"), flag);
        }
    }

    #[test]
    fn synthesize_rejects_empty() {
        let (_, gw) = setup(&[("prompt_generator", &["QSTAR"])]);
        assert_eq!(PromptRefinery::new(&gw, false).synthesize_prompt("x", &f()).unwrap(), "QSTAR");
        let (_, gw) = setup(&[("prompt_generator", &["  "])]);
        let err = PromptRefinery::new(&gw, false).synthesize_prompt("x", &f()).unwrap_err();
        assert_eq!(err, EngineError::EmptyField("refined_prompt".into()));
    }

    #[test]
    fn full_chain_in_order_with_shared_representation() {
        let (backend, gw) = setup(&[
            ("task_parser", &[P1]),
            ("prompt_template", &[TEMPLATE]),
            ("prompt_optimizer", &["QOPT"]),
            ("prompt_generator", &["QSTAR"]),
        ]);
        let bundle = PromptRefinery::new(&gw, false).refine("Reverse a string in Python").unwrap();
        assert_eq!(bundle.raw_query, "Reverse a string in Python");
        assert_eq!(bundle.representation, f());
        assert_eq!(bundle.initial_template.as_deref(), Some(TEMPLATE));
        assert_eq!(bundle.optimized_prompt.as_deref(), Some("QOPT"));
        assert_eq!(bundle.refined_prompt, "QSTAR");

        let received = backend.received();
        let order: Vec<&str> = received.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(order, keys::REFINEMENT);
        let blocks: Vec<&String> = received[1..].iter().map(|(_, r)| &r.user_messages[1]).collect();
        assert!(blocks.iter().all(|b| **b == prompts::representation_block(&f())));
    }
}
