//! Per-question orchestration: retrieve, enrich, assemble, ask, grade.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{load_exam, CorpusError, Exam, ExamQuestion, KnowledgePiece};
use crate::eval::{grade, ExamReport, GradeError, PromptMeta, QuestionOutcome, QuestionResult};
use crate::fewshot::{enrich, select_generated_correct, FewShotBlock, FewShotContext, FewShotError, Strategy};
use crate::llm::{CountingModel, LanguageModel};
use crate::prompt::{AssembledPrompt, PromptBuilder, PromptError, Templates};
use crate::retrieval::{retrieve_examples, retrieve_knowledge, RetrievalError};
use crate::tokenizer::HeuristicEstimator;
use crate::{BankIndex, KnowledgeIndex};

use super::config::{ConfigError, ExampleSource, RunConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Grade(#[from] GradeError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Inputs loaded once and shared by every run of a session.
pub struct Resources {
    pub exam: Exam,
    pub knowledge: Option<KnowledgeIndex>,
    pub bank: Option<BankIndex>,
    pub builder: PromptBuilder,
}

impl Resources {
    /// Loads whatever any of `configs` needs; the first config supplies the paths.
    pub fn load(configs: &[&RunConfig]) -> Result<Self, PipelineError> {
        let first = configs.first().ok_or_else(|| ConfigError::Invalid("no run configuration".into()))?;
        for config in configs {
            config.validate()?;
            config.check_paths()?;
        }
        let paths = &first.paths;
        let exam_path = paths.exam.as_ref().ok_or_else(|| ConfigError::Invalid("paths.exam is required".into()))?;
        let loaded = load_exam(exam_path)?;
        for r in &loaded.rejected {
            log::warn!("{}: {r}", exam_path.display());
        }
        let knowledge = match (&paths.knowledge_index, configs.iter().any(|c| c.use_knowledge)) {
            (Some(path), true) => Some(KnowledgeIndex::load(path)?),
            _ => None,
        };
        let bank = match (&paths.bank_index, configs.iter().any(|c| c.num_shots > 0)) {
            (Some(path), true) => Some(BankIndex::load(path)?),
            _ => None,
        };
        let templates = match &paths.templates {
            Some(path) => Templates::load(path)?,
            None => Templates::default(),
        };
        Ok(Self { exam: loaded.value, knowledge, bank, builder: PromptBuilder::new(templates, Arc::new(HeuristicEstimator)) })
    }
}

/// Why a question could not be asked.
#[derive(Debug, Error)]
enum QuestionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    FewShot(#[from] FewShotError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{0}")]
    Missing(&'static str),
}

fn sample_examples(bank: &BankIndex, question: &ExamQuestion, k: usize, seed: u64, position: usize) -> Vec<ExamQuestion> {
    let pool: Vec<&ExamQuestion> = bank.docs().iter().filter(|q| q.id != question.id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position as u64);
    rand::seq::index::sample(&mut rng, pool.len(), k.min(pool.len())).into_iter().map(|i| pool[i].clone()).collect()
}

/// Demonstration candidates for one question, most relevant first.
fn candidates(
    config: &RunConfig,
    resources: &Resources,
    question: &ExamQuestion,
    position: usize,
) -> Result<Vec<ExamQuestion>, QuestionError> {
    if config.num_shots == 0 {
        return Ok(Vec::new());
    }
    let bank = resources.bank.as_ref().ok_or(QuestionError::Missing("bank index not loaded"))?;
    let wanted = match config.strategy {
        Strategy::GeneratedCorrectAns => config.candidate_pool(),
        _ => config.num_shots,
    };
    Ok(match config.example_source()? {
        ExampleSource::Retrieved => retrieve_examples(bank, question, wanted),
        ExampleSource::Random { seed } => sample_examples(bank, question, wanted, seed, position),
    })
}

fn build_prompt(
    config: &RunConfig,
    resources: &Resources,
    llm: &dyn LanguageModel,
    question: &ExamQuestion,
    position: usize,
) -> Result<AssembledPrompt, QuestionError> {
    let knowledge: Vec<KnowledgePiece> = if config.use_knowledge {
        let index = resources.knowledge.as_ref().ok_or(QuestionError::Missing("knowledge index not loaded"))?;
        retrieve_knowledge(index, question).into_iter().filter_map(|slot| slot.piece.cloned()).collect()
    } else {
        Vec::new()
    };

    let examples = candidates(config, resources, question, position)?;
    let params = config.generation_params();
    let ctx = FewShotContext {
        llm,
        params: &params,
        templates: resources.builder.templates(),
        estimator: resources.builder.estimator(),
    };
    let shots: Vec<FewShotBlock> = match config.strategy {
        Strategy::GeneratedCorrectAns => select_generated_correct(&examples, config.num_shots, &ctx).blocks,
        strategy => examples.iter().map(|e| enrich(e, strategy, &ctx)).collect::<Result<_, _>>()?,
    };

    Ok(resources.builder.assemble(config.instruction, &knowledge, &shots, question, config.budget())?)
}

fn answer_question(
    config: &RunConfig,
    resources: &Resources,
    llm: &dyn LanguageModel,
    question: &ExamQuestion,
    position: usize,
) -> QuestionOutcome {
    let counter = CountingModel::new(llm);
    let mut outcome = QuestionOutcome { question_id: question.id.clone(), ..QuestionOutcome::default() };
    match build_prompt(config, resources, &counter, question, position) {
        Ok(prompt) => {
            outcome.prompt_meta = PromptMeta {
                shots: prompt.included_shots,
                knowledge: prompt.included_knowledge,
                dropped: prompt.dropped.iter().map(ToString::to_string).collect(),
            };
            match counter.complete(&prompt.text, &config.answer_params()) {
                Ok(response) => outcome.response_text = Some(response.text),
                Err(e) => outcome.error = Some(e.to_string()),
            }
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome.llm_calls = counter.calls();
    match &outcome.error {
        Some(e) => log::warn!("{}: failed: {e}", question.id),
        None => log::info!("{}: answered ({} calls)", question.id, outcome.llm_calls),
    }
    outcome
}

fn resumed_outcome(result: &QuestionResult) -> QuestionOutcome {
    QuestionOutcome {
        question_id: result.question_id.clone(),
        response_text: Some(result.response_text.clone()),
        prompt_meta: result.prompt_meta.clone(),
        llm_calls: result.llm_calls,
        error: None,
    }
}

/// Runs `work` for every question on a pool of `threads` workers,
/// reusing successful results from `prior`. Outcomes follow exam order.
pub(crate) fn for_each_question(
    exam: &Exam,
    threads: usize,
    prior: Option<&ExamReport>,
    work: impl Fn(&ExamQuestion, usize) -> QuestionOutcome + Send + Sync,
) -> Result<Vec<QuestionOutcome>, PipelineError> {
    let done: HashMap<&str, &QuestionResult> = prior
        .map(|r| r.per_question.iter().filter(|q| q.error.is_none()).map(|q| (q.question_id.as_str(), q)).collect())
        .unwrap_or_default();
    if !done.is_empty() {
        log::info!("resuming: {} questions already answered", done.len());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        exam.questions()
            .par_iter()
            .enumerate()
            .map(|(position, question)| match done.get(question.id.as_str()) {
                Some(result) => resumed_outcome(result),
                None => work(question, position),
            })
            .collect()
    }))
}

/// Answers and grades the whole exam. A question whose model call fails is
/// recorded as unanswered; the run continues.
pub fn run_exam(
    config: &RunConfig,
    resources: &Resources,
    llm: &dyn LanguageModel,
    prior: Option<&ExamReport>,
) -> Result<ExamReport, PipelineError> {
    config.validate()?;
    log::info!("run {}: {} questions", config.label(), resources.exam.len());
    let outcomes = for_each_question(&resources.exam, config.llm.max_concurrency, prior, |question, position| {
        answer_question(config, resources, llm, question, position)
    })?;
    let report = grade(&outcomes, &resources.exam, config.pass_threshold)?.with_label(config.label());
    log::info!("run {}: acc_all {} ({} failures)", config.label(), report.acc_all, report.failures());
    Ok(report)
}
