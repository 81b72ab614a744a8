//! Baseline that asks the model what each option means, then answers with
//! its own definitions in place of retrieved knowledge.

use crate::corpus::ExamQuestion;
use crate::eval::{grade, ExamReport, PromptMeta, QuestionOutcome};
use crate::llm::{CountingModel, LanguageModel};

use super::config::RunConfig;
use super::run::{for_each_question, PipelineError, Resources};

/// Calls per question: one per option plus the final answer.
pub const SELF_INQUIRY_CALLS: usize = 6;

fn inquire(config: &RunConfig, resources: &Resources, llm: &dyn LanguageModel, question: &ExamQuestion) -> QuestionOutcome {
    let counter = CountingModel::new(llm);
    let mut outcome = QuestionOutcome { question_id: question.id.clone(), ..QuestionOutcome::default() };
    let generation = config.generation_params();
    let meanings: Result<Vec<String>, _> = resources
        .builder
        .self_inquiry_prompts(question)
        .iter()
        .map(|prompt| counter.complete(prompt, &generation).map(|r| r.text))
        .collect();
    let result = meanings.map_err(|e| e.to_string()).and_then(|meanings| {
        let prompt = resources
            .builder
            .assemble_self_inquiry_final(question, &meanings, config.instruction, config.budget())
            .map_err(|e| e.to_string())?;
        outcome.prompt_meta = PromptMeta {
            shots: 0,
            knowledge: prompt.included_knowledge,
            dropped: prompt.dropped.iter().map(ToString::to_string).collect(),
        };
        counter.complete(&prompt.text, &config.answer_params()).map(|r| r.text).map_err(|e| e.to_string())
    });
    match result {
        Ok(text) => outcome.response_text = Some(text),
        Err(e) => {
            log::warn!("{}: failed: {e}", question.id);
            outcome.error = Some(e);
        }
    }
    outcome.llm_calls = counter.calls();
    outcome
}

pub fn run_self_inquiry(
    config: &RunConfig,
    resources: &Resources,
    llm: &dyn LanguageModel,
    prior: Option<&ExamReport>,
) -> Result<ExamReport, PipelineError> {
    config.validate()?;
    let outcomes = for_each_question(&resources.exam, config.llm.max_concurrency, prior, |question, _| {
        inquire(config, resources, llm, question)
    })?;
    Ok(grade(&outcomes, &resources.exam, config.pass_threshold)?.with_label("self-inquiry"))
}
