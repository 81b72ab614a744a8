//! Demonstration examples built from retrieved bank questions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ExamQuestion, OptionLabel};
use crate::eval::extract_answer;
use crate::llm::{LanguageModel, LlmError, LlmParams};
use crate::prompt::{render_question, Templates};
use crate::tokenizer::TokenEstimator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Question, options and gold answer.
    CorrectAns,
    /// Question, options and the model's own answer.
    GeneratedAns,
    /// Like `GeneratedAns`, keeping only examples the model answers correctly.
    GeneratedCorrectAns,
    /// Gold answer plus a model-written explanation of it.
    #[serde(rename = "correct-ans-inference")]
    CorrectAnsPlusInference,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Self::CorrectAns, Self::GeneratedAns, Self::GeneratedCorrectAns, Self::CorrectAnsPlusInference];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CorrectAns => "correct-ans",
            Self::GeneratedAns => "generated-ans",
            Self::GeneratedCorrectAns => "generated-correct-ans",
            Self::CorrectAnsPlusInference => "correct-ans-inference",
        }
    }

    /// Whether every block shows the gold answer.
    pub fn shows_gold(self) -> bool {
        self != Self::GeneratedAns
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|st| st.as_str()).collect();
                format!("unknown strategy {s:?} (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FewShotError {
    #[error("example {id}: no gold answer")]
    MissingGold { id: String },
    #[error("example {id}: {source}")]
    Llm { id: String, source: LlmError },
    #[error("example {id}: no answer parsed from {response:?}")]
    NoAnswerParsed { id: String, response: String },
    #[error("example {id}: generated answer {generated} differs from gold {gold}")]
    Rejected { id: String, generated: OptionLabel, gold: OptionLabel },
    #[error("example {id}: empty inference detail")]
    EmptyInference { id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotBlock {
    pub question: ExamQuestion,
    pub shown_answer: OptionLabel,
    pub inference_detail: Option<String>,
    pub provenance: Provenance,
    pub token_estimate: usize,
}

impl FewShotBlock {
    fn build(
        question: ExamQuestion,
        shown_answer: OptionLabel,
        inference_detail: Option<String>,
        provenance: Provenance,
        estimator: &dyn TokenEstimator,
    ) -> Self {
        let mut block = Self { question, shown_answer, inference_detail, provenance, token_estimate: 0 };
        block.token_estimate = estimator.estimate(&render_block(&block));
        block
    }

    /// Block showing the gold answer with no explanation.
    pub fn gold(question: ExamQuestion, estimator: &dyn TokenEstimator) -> Result<Self, FewShotError> {
        let gold = question.answer.ok_or_else(|| FewShotError::MissingGold { id: question.id.clone() })?;
        Ok(Self::build(question, gold, None, Provenance::Gold, estimator))
    }
}

/// Stem, five option lines, an optional analysis line, then the answer line.
pub fn render_block(block: &FewShotBlock) -> String {
    let mut text = render_question(&block.question);
    if let Some(detail) = &block.inference_detail {
        text.push_str("\n解析：");
        text.push_str(detail);
    }
    text.push_str("\n答案：");
    text.push(block.shown_answer.as_char());
    text
}

/// Everything enrichment needs besides the example itself.
#[derive(Clone, Copy)]
pub struct FewShotContext<'a> {
    pub llm: &'a dyn LanguageModel,
    /// Free-form generation parameters (never the constrained mode).
    pub params: &'a LlmParams,
    pub templates: &'a Templates,
    pub estimator: &'a dyn TokenEstimator,
}

/// Prompt asking the model to answer an example directly.
pub fn answer_prompt(example: &ExamQuestion, templates: &Templates) -> String {
    format!("{}\n\n{}", templates.direct, render_question(example))
}

/// Prompt stating the gold answer and asking for the reasoning behind it.
pub fn inference_prompt(example: &ExamQuestion, gold: OptionLabel, templates: &Templates) -> String {
    let request = templates.inference_request.replace("{answer}", &gold.to_string());
    format!("{request}\n\n{}\n答案：{gold}", render_question(example))
}

fn generate_answer(example: &ExamQuestion, ctx: &FewShotContext<'_>) -> Result<OptionLabel, FewShotError> {
    let response = ctx
        .llm
        .complete(&answer_prompt(example, ctx.templates), ctx.params)
        .map_err(|source| FewShotError::Llm { id: example.id.clone(), source })?;
    extract_answer(&response.text, &example.options)
        .ok_or_else(|| FewShotError::NoAnswerParsed { id: example.id.clone(), response: response.text })
}

/// Enriches one example under `strategy`. Makes no model call for
/// `CorrectAns` and exactly one for every other strategy.
pub fn enrich(example: &ExamQuestion, strategy: Strategy, ctx: &FewShotContext<'_>) -> Result<FewShotBlock, FewShotError> {
    let missing_gold = || FewShotError::MissingGold { id: example.id.clone() };
    match strategy {
        Strategy::CorrectAns => FewShotBlock::gold(example.clone(), ctx.estimator),
        Strategy::GeneratedAns => {
            let generated = generate_answer(example, ctx)?;
            Ok(FewShotBlock::build(example.clone(), generated, None, Provenance::Generated, ctx.estimator))
        }
        Strategy::GeneratedCorrectAns => {
            let gold = example.answer.ok_or_else(missing_gold)?;
            let generated = generate_answer(example, ctx)?;
            if generated != gold {
                return Err(FewShotError::Rejected { id: example.id.clone(), generated, gold });
            }
            Ok(FewShotBlock::build(example.clone(), gold, None, Provenance::Generated, ctx.estimator))
        }
        Strategy::CorrectAnsPlusInference => {
            let gold = example.answer.ok_or_else(missing_gold)?;
            let response = ctx
                .llm
                .complete(&inference_prompt(example, gold, ctx.templates), ctx.params)
                .map_err(|source| FewShotError::Llm { id: example.id.clone(), source })?;
            if response.text.trim().is_empty() {
                return Err(FewShotError::EmptyInference { id: example.id.clone() });
            }
            Ok(FewShotBlock::build(example.clone(), gold, Some(response.text), Provenance::Gold, ctx.estimator))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Kept blocks, in candidate rank order.
    pub blocks: Vec<FewShotBlock>,
    /// Candidates examined (one model call each).
    pub inspected: usize,
    /// Candidates skipped because of a wrong, unparsable or failed answer.
    pub rejected: Vec<String>,
}

impl Selection {
    pub fn kept(&self) -> usize {
        self.blocks.len()
    }
}

/// Walks `candidates` (descending relevance), keeping those the model answers
/// correctly, until `k` are kept or candidates run out.
pub fn select_generated_correct(candidates: &[ExamQuestion], k: usize, ctx: &FewShotContext<'_>) -> Selection {
    let mut selection = Selection { blocks: Vec::new(), inspected: 0, rejected: Vec::new() };
    for candidate in candidates {
        if selection.blocks.len() >= k {
            break;
        }
        selection.inspected += 1;
        match enrich(candidate, Strategy::GeneratedCorrectAns, ctx) {
            Ok(block) => selection.blocks.push(block),
            Err(err) => {
                log::debug!("{err}");
                selection.rejected.push(candidate.id.clone());
            }
        }
    }
    if selection.blocks.len() < k {
        log::info!("kept {} of {k} generated-correct examples after {} candidates", selection.kept(), selection.inspected);
    }
    selection
}
