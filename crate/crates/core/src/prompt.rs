//! Prompt templates and budgeted prompt assembly.
//!
//! Section order: instruction, knowledge (option order), few-shot blocks
//! (least relevant first, so the most relevant sits next to the question),
//! target question. Over budget, shots are dropped from the least relevant
//! end, then knowledge from the last option backwards. The instruction and
//! the target question are never dropped.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ExamQuestion, KnowledgePiece};
use crate::fewshot::{render_block, FewShotBlock};
use crate::tokenizer::{HeuristicEstimator, TokenEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionKind {
    /// Answer only.
    Direct,
    /// Reason step by step, then answer.
    Steps,
}

impl InstructionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Steps => "steps",
        }
    }
}

impl fmt::Display for InstructionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InstructionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Self::Direct),
            "steps" => Ok(Self::Steps),
            other => Err(format!("unknown instruction {other:?} (expected direct or steps)")),
        }
    }
}

mod defaults {
    macro_rules! template_defaults {
        ($($field:ident => $text:expr),* $(,)?) => {
            $(pub(super) fn $field() -> String { $text.to_owned() })*
        };
    }

    template_defaults! {
        direct => "以下是一道关于医学知识的单项选择题，请根据题目输出唯一正确的答案。",
        steps => "以下是一道关于医学知识的单项选择题，请逐步分析并推断出最可能的答案。",
        knowledge_header => "相关医学知识：",
        examples_header => "参考例题：",
        question_header => "题目：",
        self_inquiry => "“{option}”是什么意思？",
        inference_request => "以下是一道医学单项选择题及其正确答案，请分析为什么正确答案是{answer}。",
    }
}

/// Prompt wording. Every field can be overridden from a TOML or JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    #[serde(default = "defaults::direct")]
    pub direct: String,
    #[serde(default = "defaults::steps")]
    pub steps: String,
    #[serde(default = "defaults::knowledge_header")]
    pub knowledge_header: String,
    #[serde(default = "defaults::examples_header")]
    pub examples_header: String,
    #[serde(default = "defaults::question_header")]
    pub question_header: String,
    /// `{option}` is replaced with the option text.
    #[serde(default = "defaults::self_inquiry")]
    pub self_inquiry: String,
    /// `{answer}` is replaced with the gold label.
    #[serde(default = "defaults::inference_request")]
    pub inference_request: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            direct: defaults::direct(),
            steps: defaults::steps(),
            knowledge_header: defaults::knowledge_header(),
            examples_header: defaults::examples_header(),
            question_header: defaults::question_header(),
            self_inquiry: defaults::self_inquiry(),
            inference_request: defaults::inference_request(),
        }
    }
}

impl Templates {
    pub fn instruction(&self, kind: InstructionKind) -> &str {
        match kind {
            InstructionKind::Direct => &self.direct,
            InstructionKind::Steps => &self.steps,
        }
    }

    /// Reads a `.json` file, or TOML for any other extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Templates(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| PromptError::Templates(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("question exceeds budget: instruction and question need {needed} tokens, {available} available")]
    QuestionExceedsBudget { needed: usize, available: usize },
    #[error("budget {total} must exceed the response reserve {reserve}")]
    InvalidBudget { total: usize, reserve: usize },
    #[error("template file {0}")]
    Templates(String),
}

/// Context window split between prompt and response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub total: usize,
    pub response_reserve: usize,
}

impl Budget {
    pub const CONTEXT_WINDOW: usize = 4096;

    /// 4096 tokens; 16 reserved for a direct answer, 512 for step-by-step reasoning.
    pub fn for_instruction(kind: InstructionKind) -> Self {
        let response_reserve = match kind {
            InstructionKind::Direct => 16,
            InstructionKind::Steps => 512,
        };
        Self { total: Self::CONTEXT_WINDOW, response_reserve }
    }

    fn prompt_limit(self) -> Result<usize, PromptError> {
        if self.total <= self.response_reserve {
            return Err(PromptError::InvalidBudget { total: self.total, reserve: self.response_reserve });
        }
        Ok(self.total - self.response_reserve)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropKind {
    Shot,
    Knowledge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub kind: DropKind,
    pub id: String,
}

impl fmt::Display for Dropped {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DropKind::Shot => "shot",
            DropKind::Knowledge => "knowledge",
        };
        write!(f, "{kind}:{}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub token_estimate: usize,
    pub included_shots: usize,
    pub included_knowledge: usize,
    /// In drop order.
    pub dropped: Vec<Dropped>,
}

/// Stem followed by one `X. text` line per option.
pub fn render_question(question: &ExamQuestion) -> String {
    let mut text = question.stem.clone();
    for (label, option) in question.labeled_options() {
        text.push('\n');
        text.push_str(&format!("{label}. {option}"));
    }
    text
}

/// Assembles prompts from templates under a token estimator.
#[derive(Clone)]
pub struct PromptBuilder {
    templates: Templates,
    estimator: Arc<dyn TokenEstimator>,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::new(Templates::default(), Arc::new(HeuristicEstimator))
    }
}

impl fmt::Debug for PromptBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PromptBuilder").field("templates", &self.templates).finish_non_exhaustive()
    }
}

impl PromptBuilder {
    pub fn new(templates: Templates, estimator: Arc<dyn TokenEstimator>) -> Self {
        Self { templates, estimator }
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn estimator(&self) -> &dyn TokenEstimator {
        self.estimator.as_ref()
    }

    fn render(
        &self,
        instruction: &str,
        knowledge: &[&str],
        shots: &[&str],
        question: &ExamQuestion,
    ) -> String {
        let mut sections: Vec<String> = vec![instruction.to_owned()];
        if !knowledge.is_empty() {
            sections.push(format!("{}\n{}", self.templates.knowledge_header, knowledge.join("\n")));
        }
        if !shots.is_empty() {
            // Least relevant first.
            let blocks: Vec<&str> = shots.iter().rev().copied().collect();
            sections.push(format!("{}\n{}", self.templates.examples_header, blocks.join("\n\n")));
        }
        sections.push(format!("{}\n{}", self.templates.question_header, render_question(question)));
        sections.join("\n\n")
    }

    fn fit(
        &self,
        instruction: InstructionKind,
        knowledge: &[(String, String)],
        shots: &[(String, String)],
        question: &ExamQuestion,
        budget: Budget,
    ) -> Result<AssembledPrompt, PromptError> {
        let limit = budget.prompt_limit()?;
        let instruction = self.templates.instruction(instruction);

        let core = self.render(instruction, &[], &[], question);
        let needed = self.estimator.estimate(&core);
        if needed > limit {
            return Err(PromptError::QuestionExceedsBudget { needed, available: limit });
        }

        let mut kept_shots = shots.len();
        let mut kept_knowledge = knowledge.len();
        let mut dropped = Vec::new();
        loop {
            let knowledge_text: Vec<&str> = knowledge[..kept_knowledge].iter().map(|(_, t)| t.as_str()).collect();
            let shot_text: Vec<&str> = shots[..kept_shots].iter().map(|(_, t)| t.as_str()).collect();
            let text = self.render(instruction, &knowledge_text, &shot_text, question);
            let token_estimate = self.estimator.estimate(&text);
            if token_estimate <= limit {
                return Ok(AssembledPrompt {
                    text,
                    token_estimate,
                    included_shots: kept_shots,
                    included_knowledge: kept_knowledge,
                    dropped,
                });
            }
            if kept_shots > 0 {
                kept_shots -= 1;
                dropped.push(Dropped { kind: DropKind::Shot, id: shots[kept_shots].0.clone() });
            } else if kept_knowledge > 0 {
                kept_knowledge -= 1;
                dropped.push(Dropped { kind: DropKind::Knowledge, id: knowledge[kept_knowledge].0.clone() });
            } else {
                // The core fitted above, so this is unreachable for subadditive estimators.
                return Err(PromptError::QuestionExceedsBudget { needed: token_estimate, available: limit });
            }
        }
    }

    /// Full prompt. `knowledge` is in option order; `shots` in descending relevance.
    pub fn assemble(
        &self,
        instruction: InstructionKind,
        knowledge: &[KnowledgePiece],
        shots: &[FewShotBlock],
        question: &ExamQuestion,
        budget: Budget,
    ) -> Result<AssembledPrompt, PromptError> {
        let knowledge: Vec<(String, String)> = knowledge.iter().map(|k| (k.id.clone(), k.text.clone())).collect();
        let shots: Vec<(String, String)> = shots.iter().map(|s| (s.question.id.clone(), render_block(s))).collect();
        self.fit(instruction, &knowledge, &shots, question, budget)
    }

    /// One meaning question per option, in label order.
    pub fn self_inquiry_prompts(&self, question: &ExamQuestion) -> [String; 5] {
        question.options.clone().map(|option| self.templates.self_inquiry.replace("{option}", &option))
    }

    /// Final self-inquiry prompt: the model's own option meanings stand in
    /// for retrieved knowledge and are truncated the same way.
    pub fn assemble_self_inquiry_final(
        &self,
        question: &ExamQuestion,
        meanings: &[String],
        instruction: InstructionKind,
        budget: Budget,
    ) -> Result<AssembledPrompt, PromptError> {
        let knowledge: Vec<(String, String)> = meanings
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let label = crate::corpus::OptionLabel::from_index(i).map_or_else(|| i.to_string(), |l| l.to_string());
                (format!("meaning-{label}"), m.clone())
            })
            .collect();
        self.fit(instruction, &knowledge, &[], question, budget)
    }
}

/// [`PromptBuilder::assemble`] with default templates and estimator.
pub fn assemble(
    instruction: InstructionKind,
    knowledge: &[KnowledgePiece],
    shots: &[FewShotBlock],
    question: &ExamQuestion,
    budget: Budget,
) -> Result<AssembledPrompt, PromptError> {
    PromptBuilder::default().assemble(instruction, knowledge, shots, question, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::OptionLabel;
    use crate::fewshot::FewShotBlock;

    fn question() -> ExamQuestion {
        ExamQuestion {
            id: "t1".into(),
            stem: "男，58岁。突发胸骨后压榨性疼痛2小时。最可能的诊断是".into(),
            options: ["急性心肌梗死", "心绞痛", "主动脉夹层", "肺栓塞", "气胸"].map(String::from),
            answer: Some(OptionLabel::A),
            category: None,
        }
    }

    fn shot(id: &str) -> FewShotBlock {
        let q = ExamQuestion { id: id.into(), ..question() };
        FewShotBlock::gold(q, &HeuristicEstimator).unwrap()
    }

    fn piece(id: &str, text: &str) -> KnowledgePiece {
        KnowledgePiece::new(id, "src", text, &HeuristicEstimator).unwrap()
    }

    #[test]
    fn huge_budget_keeps_everything() {
        let knowledge = vec![piece("k1", "心肌梗死是冠状动脉急性闭塞所致。"), piece("k2", "主动脉夹层表现为撕裂样痛。")];
        let shots = vec![shot("s1"), shot("s2"), shot("s3")];
        let budget = Budget { total: 100_000, response_reserve: 16 };
        let p = assemble(InstructionKind::Direct, &knowledge, &shots, &question(), budget).unwrap();
        assert_eq!((p.included_shots, p.included_knowledge), (3, 2));
        assert!(p.dropped.is_empty());
        assert_eq!(p.token_estimate, HeuristicEstimator.estimate(&p.text));
    }

    #[test]
    fn one_drop_removes_least_relevant_shot() {
        let knowledge = vec![piece("k1", "心肌梗死是冠状动脉急性闭塞所致。")];
        let shots = vec![shot("s1"), shot("s2")];
        let full = assemble(InstructionKind::Direct, &knowledge, &shots, &question(), Budget { total: 100_000, response_reserve: 0 })
            .unwrap();
        let budget = Budget { total: full.token_estimate - 1, response_reserve: 0 };
        let p = assemble(InstructionKind::Direct, &knowledge, &shots, &question(), budget).unwrap();
        assert_eq!(p.dropped, vec![Dropped { kind: DropKind::Shot, id: "s2".into() }]);
        assert_eq!(p.included_knowledge, 1);
    }

    #[test]
    fn question_over_budget_is_an_error() {
        let budget = Budget { total: 20, response_reserve: 4 };
        assert!(matches!(
            assemble(InstructionKind::Direct, &[], &[], &question(), budget),
            Err(PromptError::QuestionExceedsBudget { .. })
        ));
        assert!(matches!(
            assemble(InstructionKind::Direct, &[], &[], &question(), Budget { total: 4, response_reserve: 4 }),
            Err(PromptError::InvalidBudget { .. })
        ));
    }

    #[test]
    fn most_relevant_shot_is_adjacent_to_question() {
        let mut first = shot("s1");
        first.question.stem = "最相关的例题".into();
        let mut second = shot("s2");
        second.question.stem = "次相关的例题".into();
        let p = assemble(InstructionKind::Direct, &[], &[first, second], &question(), Budget { total: 100_000, response_reserve: 0 })
            .unwrap();
        assert!(p.text.find("次相关").unwrap() < p.text.find("最相关").unwrap());
    }

    #[test]
    fn self_inquiry_prompts_embed_options() {
        let prompts = PromptBuilder::default().self_inquiry_prompts(&question());
        assert_eq!(prompts.len(), 5);
        assert!(prompts[0].contains("急性心肌梗死"));
        assert!(prompts[4].contains("气胸"));
    }

    #[test]
    fn empty_meanings_match_zero_shot() {
        let builder = PromptBuilder::default();
        let budget = Budget::for_instruction(InstructionKind::Direct);
        let zero = builder.assemble(InstructionKind::Direct, &[], &[], &question(), budget).unwrap();
        let inquiry = builder.assemble_self_inquiry_final(&question(), &[], InstructionKind::Direct, budget).unwrap();
        assert_eq!(zero, inquiry);
        assert!(!inquiry.text.contains(&builder.templates().knowledge_header));
    }

    #[test]
    fn meanings_drop_from_the_last_option() {
        let builder = PromptBuilder::default();
        let meanings: Vec<String> = ["甲义。", "乙义。", "丙义。", "丁义。", "戊义。"].map(String::from).to_vec();
        let big = Budget { total: 100_000, response_reserve: 0 };
        let full = builder.assemble_self_inquiry_final(&question(), &meanings, InstructionKind::Direct, big).unwrap();
        let positions: Vec<usize> = meanings.iter().map(|m| full.text.find(m.as_str()).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));

        let tight = Budget { total: full.token_estimate - 3, response_reserve: 0 };
        let cut = builder.assemble_self_inquiry_final(&question(), &meanings, InstructionKind::Direct, tight).unwrap();
        assert_eq!(cut.dropped[0], Dropped { kind: DropKind::Knowledge, id: "meaning-E".into() });
        assert_eq!(cut.included_knowledge, 4);
    }

    #[test]
    fn templates_load_partial_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        std::fs::write(&path, "direct = \"只输出答案。\"\n").unwrap();
        let t = Templates::load(&path).unwrap();
        assert_eq!(t.direct, "只输出答案。");
        assert_eq!(t.steps, Templates::default().steps);
        std::fs::write(&path, "bogus = \"x\"\n").unwrap();
        assert!(Templates::load(&path).is_err());
    }
}
