//! Grading with exact rational accuracy and MK/CA decomposition.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{Category, Exam, OptionLabel};
use crate::eval::extract::extract_answer;

pub const REPORT_SCHEMA: &str = "kfe-report/1";

/// Exact accuracy fraction.
pub type Accuracy = Ratio<u64>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GradeError {
    #[error("question {0} has no gold answer")]
    MissingGold(String),
    #[error("question {0} has no category")]
    MissingCategory(String),
    #[error("no outcome recorded for question {0}")]
    MissingOutcome(String),
    #[error("outcome for unknown question {0}")]
    UnknownQuestion(String),
    #[error("no responses to bucket")]
    NoResponses,
    #[error("bucket count must be positive")]
    NoBuckets,
}

/// A percentage held in hundredths, rounded half-up from an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(u32);

impl Percent {
    pub const fn from_hundredths(hundredths: u32) -> Self {
        Self(hundredths)
    }

    pub fn from_whole(value: u32) -> Self {
        Self(value * 100)
    }

    /// `100 * ratio`, rounded half-up to two decimals.
    pub fn from_ratio(ratio: Accuracy) -> Self {
        let scaled = ratio * Ratio::from_integer(10_000u64) + Ratio::new(1, 2);
        Self(u32::try_from(scaled.floor().to_integer()).expect("percentage fits in u32"))
    }

    /// Percentage of `correct` over `total`; zero when `total` is zero.
    pub fn of(correct: usize, total: usize) -> Self {
        if total == 0 {
            return Self(0);
        }
        Self::from_ratio(Ratio::new(correct as u64, total as u64))
    }

    pub fn hundredths(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&format!("{}.{:02}", self.0 / 100, self.0 % 100))
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        if !(0.0..=100.0).contains(&value) {
            return Err(serde::de::Error::custom(format!("percentage {value} out of range")));
        }
        Ok(Self((value * 100.0).round() as u32))
    }
}

/// What went into the prompt for one question.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub shots: usize,
    pub knowledge: usize,
    /// `kind:id` for each truncated item.
    #[serde(default)]
    pub dropped: Vec<String>,
}

/// Raw per-question output of a run, before grading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    /// `None` when the final LLM call (or a step before it) failed.
    pub response_text: Option<String>,
    pub prompt_meta: PromptMeta,
    pub llm_calls: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub category: Category,
    pub predicted: Option<OptionLabel>,
    pub gold: OptionLabel,
    pub correct: bool,
    pub response_text: String,
    pub sentence_count: usize,
    pub prompt_meta: PromptMeta,
    #[serde(default)]
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamReport {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub acc_mk: Percent,
    pub acc_ca: Percent,
    pub acc_all: Percent,
    pub n_mk: usize,
    pub n_ca: usize,
    pub correct_mk: usize,
    pub correct_ca: usize,
    pub pass_threshold: Percent,
    pub passed: bool,
    pub per_question: Vec<QuestionResult>,
}

impl ExamReport {
    pub const DEFAULT_PASS: Percent = Percent::from_hundredths(6000);

    /// Aggregates graded results. Aggregates do not depend on result order.
    pub fn from_results(per_question: Vec<QuestionResult>, pass_threshold: Percent) -> Self {
        let mut n = HashMap::<Category, (usize, usize)>::new();
        for r in &per_question {
            let entry = n.entry(r.category).or_default();
            entry.0 += 1;
            entry.1 += usize::from(r.correct);
        }
        let (n_mk, correct_mk) = n.get(&Category::MedicalKnowledge).copied().unwrap_or_default();
        let (n_ca, correct_ca) = n.get(&Category::CaseAnalysis).copied().unwrap_or_default();
        let acc_all = Percent::of(correct_mk + correct_ca, n_mk + n_ca);
        Self {
            schema: REPORT_SCHEMA.to_owned(),
            label: None,
            acc_mk: Percent::of(correct_mk, n_mk),
            acc_ca: Percent::of(correct_ca, n_ca),
            acc_all,
            n_mk,
            n_ca,
            correct_mk,
            correct_ca,
            pass_threshold,
            passed: acc_all >= pass_threshold,
            per_question,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn total(&self) -> usize {
        self.n_mk + self.n_ca
    }

    pub fn failures(&self) -> usize {
        self.per_question.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Number of non-empty segments after splitting on `。！？!?.`.
pub fn sentence_count(text: &str) -> usize {
    text.split(['。', '！', '？', '!', '?', '.']).filter(|s| !s.trim().is_empty()).count()
}

/// Grades outcomes against the exam's gold answers. Outcomes may arrive in
/// any order; results follow exam order.
pub fn grade(outcomes: &[QuestionOutcome], exam: &Exam, pass_threshold: Percent) -> Result<ExamReport, GradeError> {
    let mut by_id: HashMap<&str, &QuestionOutcome> = HashMap::with_capacity(outcomes.len());
    for outcome in outcomes {
        by_id.insert(outcome.question_id.as_str(), outcome);
    }
    if let Some(stray) = outcomes.iter().find(|o| !exam.questions().iter().any(|q| q.id == o.question_id)) {
        return Err(GradeError::UnknownQuestion(stray.question_id.clone()));
    }

    let mut results = Vec::with_capacity(exam.len());
    for question in exam.questions() {
        let gold = question.answer.ok_or_else(|| GradeError::MissingGold(question.id.clone()))?;
        let category = question.category.ok_or_else(|| GradeError::MissingCategory(question.id.clone()))?;
        let outcome = by_id.get(question.id.as_str()).ok_or_else(|| GradeError::MissingOutcome(question.id.clone()))?;
        let response_text = outcome.response_text.clone().unwrap_or_default();
        let predicted = outcome.response_text.as_deref().and_then(|text| extract_answer(text, &question.options));
        results.push(QuestionResult {
            question_id: question.id.clone(),
            category,
            predicted,
            gold,
            correct: predicted == Some(gold),
            sentence_count: sentence_count(&response_text),
            response_text,
            prompt_meta: outcome.prompt_meta.clone(),
            llm_calls: outcome.llm_calls,
            error: outcome.error.clone(),
        });
    }
    Ok(ExamReport::from_results(results, pass_threshold))
}
