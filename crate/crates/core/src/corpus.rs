//! Knowledge pieces, exam questions and the loaders/chunker that produce them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::TokenEstimator;

/// Option key of a five-choice question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptionLabel {
    A,
    B,
    C,
    D,
    E,
}

impl OptionLabel {
    pub const ALL: [OptionLabel; 5] = [Self::A, Self::B, Self::C, Self::D, Self::E];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }

    /// Accepts `A`-`E` in either case, ASCII or full-width.
    pub fn from_char(ch: char) -> Option<Self> {
        let ch = match ch {
            'Ａ'..='Ｅ' => char::from_u32(ch as u32 - 'Ａ' as u32 + 'A' as u32)?,
            'ａ'..='ｅ' => char::from_u32(ch as u32 - 'ａ' as u32 + 'A' as u32)?,
            _ => ch.to_ascii_uppercase(),
        };
        match ch {
            'A' => Some(Self::A),
            'B' => Some(Self::B),
            'C' => Some(Self::C),
            'D' => Some(Self::D),
            'E' => Some(Self::E),
            _ => None,
        }
    }

    /// Parses a whole string that must be exactly one label character.
    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.trim().chars();
        let ch = chars.next()?;
        if chars.next().is_some() {
            return None;
        }
        Self::from_char(ch)
    }
}

impl fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Question category: medical-knowledge recall or clinical case analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "MK")]
    MedicalKnowledge,
    #[serde(rename = "CA")]
    CaseAnalysis,
}

impl Category {
    pub fn code(self) -> &'static str {
        match self {
            Self::MedicalKnowledge => "MK",
            Self::CaseAnalysis => "CA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MK" => Some(Self::MedicalKnowledge),
            "CA" => Some(Self::CaseAnalysis),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One retrievable chunk of background text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgePiece {
    pub id: String,
    pub source: String,
    pub text: String,
    pub token_estimate: usize,
}

impl KnowledgePiece {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        text: impl Into<String>,
        estimator: &dyn TokenEstimator,
    ) -> Result<Self, RecordError> {
        let id = id.into();
        let text = text.into();
        if id.trim().is_empty() {
            return Err(RecordError::EmptyField("id"));
        }
        if text.trim().is_empty() {
            return Err(RecordError::EmptyField("text"));
        }
        let token_estimate = estimator.estimate(&text);
        if token_estimate == 0 {
            return Err(RecordError::EmptyField("text"));
        }
        Ok(Self { id, source: source.into(), text, token_estimate })
    }
}

/// A five-option multiple-choice question, optionally carrying its gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QuestionRecord", into = "QuestionRecord")]
pub struct ExamQuestion {
    pub id: String,
    pub stem: String,
    pub options: [String; 5],
    pub answer: Option<OptionLabel>,
    pub category: Option<Category>,
}

impl ExamQuestion {
    pub fn option(&self, label: OptionLabel) -> &str {
        &self.options[label.index()]
    }

    pub fn labeled_options(&self) -> impl Iterator<Item = (OptionLabel, &str)> {
        OptionLabel::ALL.into_iter().zip(self.options.iter().map(String::as_str))
    }

    /// Stem followed by every option text in label order, space separated.
    pub fn full_text(&self) -> String {
        let mut text = self.stem.clone();
        for option in &self.options {
            text.push(' ');
            text.push_str(option);
        }
        text
    }

    fn validate(&self) -> Result<(), RecordError> {
        if self.id.trim().is_empty() {
            return Err(RecordError::EmptyField("id"));
        }
        if self.stem.trim().is_empty() {
            return Err(RecordError::EmptyField("stem"));
        }
        for (label, text) in self.labeled_options() {
            if text.trim().is_empty() {
                return Err(RecordError::EmptyOption(label));
            }
        }
        Ok(())
    }
}

/// On-disk JSONL shape of a question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub stem: String,
    pub options: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl TryFrom<QuestionRecord> for ExamQuestion {
    type Error = RecordError;

    fn try_from(record: QuestionRecord) -> Result<Self, Self::Error> {
        if record.options.len() != 5 {
            return Err(RecordError::OptionCount(record.options.len()));
        }
        let mut options: [Option<String>; 5] = Default::default();
        for (key, text) in record.options {
            let label = OptionLabel::parse(&key).ok_or_else(|| RecordError::BadOptionLabel(key.clone()))?;
            if options[label.index()].replace(text).is_some() {
                return Err(RecordError::BadOptionLabel(key));
            }
        }
        let options = options.map(Option::unwrap_or_default);
        let answer = match record.answer {
            Some(raw) => Some(OptionLabel::parse(&raw).ok_or(RecordError::BadAnswer(raw))?),
            None => None,
        };
        let category = match record.category {
            Some(raw) => Some(Category::parse(&raw).ok_or(RecordError::BadCategory(raw))?),
            None => None,
        };
        let question = ExamQuestion { id: record.id, stem: record.stem, options, answer, category };
        question.validate()?;
        Ok(question)
    }
}

impl From<ExamQuestion> for QuestionRecord {
    fn from(q: ExamQuestion) -> Self {
        let options = OptionLabel::ALL
            .into_iter()
            .zip(q.options)
            .map(|(label, text)| (label.to_string(), text))
            .collect();
        QuestionRecord {
            id: q.id,
            stem: q.stem,
            options,
            answer: q.answer.map(|a| a.to_string()),
            category: q.category.map(|c| c.code().to_owned()),
        }
    }
}

/// Why a single JSONL record was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("expected exactly 5 options, found {0}")]
    OptionCount(usize),
    #[error("option key {0:?} is not one of A-E")]
    BadOptionLabel(String),
    #[error("option {0} is empty")]
    EmptyOption(OptionLabel),
    #[error("answer {0:?} is not one of A-E")]
    BadAnswer(String),
    #[error("category {0:?} is not MK or CA")]
    BadCategory(String),
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("missing answer field")]
    MissingAnswer,
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId { id: String, first_line: usize, second_line: usize },
    #[error("target_tokens must be at least 16, got {0}")]
    TargetTooSmall(usize),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_owned(), source }
    }
}

/// Successfully loaded value plus the lines that were skipped.
#[derive(Debug, Clone)]
pub struct LoadOutcome<T> {
    pub value: T,
    pub rejected: Vec<Rejection>,
}

/// Questions with gold answers, usable as few-shot demonstrations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionBank {
    entries: Vec<ExamQuestion>,
}

impl QuestionBank {
    /// Fails on a missing answer or a duplicate id.
    pub fn new(entries: Vec<ExamQuestion>) -> Result<Self, CorpusError> {
        let mut seen = HashMap::new();
        for (i, q) in entries.iter().enumerate() {
            if let Some(first) = seen.insert(q.id.as_str(), i + 1) {
                return Err(CorpusError::DuplicateId { id: q.id.clone(), first_line: first, second_line: i + 1 });
            }
        }
        if let Some(q) = entries.iter().find(|q| q.answer.is_none()) {
            log::warn!("bank entry {} has no answer; dropping it", q.id);
        }
        Ok(Self { entries: entries.into_iter().filter(|q| q.answer.is_some()).collect() })
    }

    pub fn entries(&self) -> &[ExamQuestion] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ExamQuestion> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-category question counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CategoryCounts {
    pub mk: usize,
    pub ca: usize,
    pub uncategorized: usize,
}

/// An exam in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Exam {
    questions: Vec<ExamQuestion>,
}

impl Exam {
    pub fn new(questions: Vec<ExamQuestion>) -> Result<Self, CorpusError> {
        check_unique(questions.iter().map(|q| q.id.as_str()))?;
        Ok(Self { questions })
    }

    pub fn questions(&self) -> &[ExamQuestion] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn category_counts(&self) -> CategoryCounts {
        let mut counts = CategoryCounts::default();
        for q in &self.questions {
            match q.category {
                Some(Category::MedicalKnowledge) => counts.mk += 1,
                Some(Category::CaseAnalysis) => counts.ca += 1,
                None => counts.uncategorized += 1,
            }
        }
        counts
    }
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), CorpusError> {
    let mut seen = HashMap::new();
    for (i, id) in ids.enumerate() {
        if let Some(first) = seen.insert(id, i + 1) {
            return Err(CorpusError::DuplicateId { id: id.to_owned(), first_line: first, second_line: i + 1 });
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line = if i == 0 { line.trim_start_matches('\u{feff}').to_owned() } else { line };
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    Ok(lines)
}

/// Parses question JSONL text. Returns accepted questions with their line numbers.
pub fn parse_questions(
    lines: impl IntoIterator<Item = (usize, String)>,
    require_answer: bool,
) -> Result<LoadOutcome<Vec<(usize, ExamQuestion)>>, CorpusError> {
    let mut accepted: Vec<(usize, ExamQuestion)> = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (line_no, line) in lines {
        let parsed = serde_json::from_str::<QuestionRecord>(&line)
            .map_err(|e| RecordError::Json(e.to_string()))
            .and_then(ExamQuestion::try_from)
            .and_then(|q| match (require_answer, q.answer) {
                (true, None) => Err(RecordError::MissingAnswer),
                _ => Ok(q),
            });
        match parsed {
            Ok(q) => {
                if let Some(&first_line) = seen.get(&q.id) {
                    return Err(CorpusError::DuplicateId { id: q.id, first_line, second_line: line_no });
                }
                seen.insert(q.id.clone(), line_no);
                accepted.push((line_no, q));
            }
            Err(e) => {
                log::warn!("line {line_no}: rejected: {e}");
                rejected.push(Rejection { line: line_no, reason: e.to_string() });
            }
        }
    }
    Ok(LoadOutcome { value: accepted, rejected })
}

/// Loads a question bank; every entry must carry a gold answer.
pub fn load_question_bank(path: impl AsRef<Path>) -> Result<LoadOutcome<QuestionBank>, CorpusError> {
    let outcome = parse_questions(read_lines(path.as_ref())?, true)?;
    let entries = outcome.value.into_iter().map(|(_, q)| q).collect();
    Ok(LoadOutcome { value: QuestionBank { entries }, rejected: outcome.rejected })
}

/// Loads an exam. Answers and categories are optional here and checked at grading.
pub fn load_exam(path: impl AsRef<Path>) -> Result<LoadOutcome<Exam>, CorpusError> {
    let path = path.as_ref();
    let outcome = parse_questions(read_lines(path)?, false)?;
    let exam = Exam { questions: outcome.value.into_iter().map(|(_, q)| q).collect() };
    if exam.is_empty() {
        log::warn!("exam file {} contains no questions", path.display());
    } else {
        let counts = exam.category_counts();
        log::info!(
            "loaded {} questions from {} (MK {}, CA {}, uncategorized {})",
            exam.len(),
            path.display(),
            counts.mk,
            counts.ca,
            counts.uncategorized
        );
    }
    Ok(LoadOutcome { value: exam, rejected: outcome.rejected })
}

#[derive(Debug, Serialize, Deserialize)]
struct KnowledgeRecord {
    id: String,
    #[serde(default)]
    source: String,
    text: String,
}

/// Loads knowledge JSONL (`{"id", "source", "text"}`).
pub fn load_knowledge(
    path: impl AsRef<Path>,
    estimator: &dyn TokenEstimator,
) -> Result<LoadOutcome<Vec<KnowledgePiece>>, CorpusError> {
    let mut pieces: Vec<KnowledgePiece> = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line_no, line) in read_lines(path.as_ref())? {
        let parsed = serde_json::from_str::<KnowledgeRecord>(&line)
            .map_err(|e| RecordError::Json(e.to_string()))
            .and_then(|r| KnowledgePiece::new(r.id, r.source, r.text, estimator));
        match parsed {
            Ok(piece) => {
                if let Some(&first_line) = seen.get(&piece.id) {
                    return Err(CorpusError::DuplicateId { id: piece.id, first_line, second_line: line_no });
                }
                seen.insert(piece.id.clone(), line_no);
                pieces.push(piece);
            }
            Err(e) => rejected.push(Rejection { line: line_no, reason: e.to_string() }),
        }
    }
    Ok(LoadOutcome { value: pieces, rejected })
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn write_questions<'a>(
    path: impl AsRef<Path>,
    questions: impl IntoIterator<Item = &'a ExamQuestion>,
) -> Result<(), CorpusError> {
    write_jsonl(path.as_ref(), questions.into_iter())
}

pub fn write_knowledge<'a>(
    path: impl AsRef<Path>,
    pieces: impl IntoIterator<Item = &'a KnowledgePiece>,
) -> Result<(), CorpusError> {
    let records = pieces.into_iter().map(|p| KnowledgeRecord {
        id: p.id.clone(),
        source: p.source.clone(),
        text: p.text.clone(),
    });
    write_jsonl(path.as_ref(), records)
}

/// One paragraph with the headings it sits under (outermost first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub heading_path: Vec<String>,
    pub text: String,
}

/// A pre-extracted book: paragraphs in reading order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub paragraphs: Vec<Paragraph>,
}

impl Document {
    /// Parses Markdown-style text: `#` lines are headings (level = number of
    /// `#`), blank lines separate paragraphs.
    pub fn from_markdown(id: impl Into<String>, text: &str) -> Self {
        let mut headings: Vec<String> = Vec::new();
        let mut paragraphs = Vec::new();
        let mut current: Vec<&str> = Vec::new();

        let flush = |current: &mut Vec<&str>, headings: &[String], paragraphs: &mut Vec<Paragraph>| {
            if !current.is_empty() {
                paragraphs.push(Paragraph { heading_path: headings.to_vec(), text: current.join(" ") });
                current.clear();
            }
        };

        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                flush(&mut current, &headings, &mut paragraphs);
                continue;
            }
            let level = trimmed.chars().take_while(|&c| c == '#').count();
            if level > 0 {
                flush(&mut current, &headings, &mut paragraphs);
                headings.truncate(level - 1);
                headings.push(trimmed[level..].trim().to_owned());
                continue;
            }
            current.push(trimmed);
        }
        flush(&mut current, &headings, &mut paragraphs);
        Self { id: id.into(), paragraphs }
    }
}

/// Splits text after sentence-final punctuation. A `.` only ends a sentence
/// when followed by whitespace or the end of text. Segments concatenate back
/// to the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut segments = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, ch)) = iter.next() {
        let next = iter.peek().map(|&(_, c)| c);
        let ends = match ch {
            '。' | '！' | '？' | '!' | '?' | '；' | ';' => true,
            '.' => next.is_none_or(char::is_whitespace),
            _ => false,
        };
        if ends {
            let end = i + ch.len_utf8();
            segments.push(&text[start..end]);
            start = end;
        }
    }
    if start < text.len() {
        segments.push(&text[start..]);
    }
    segments
}

struct Unit<'a> {
    text: &'a str,
    tokens: usize,
    // Continuation of the previous unit's paragraph (joined without separator).
    continues: bool,
}

/// Cuts an oversize paragraph into sentence-level units, and any sentence
/// still over `cap` into character windows.
fn split_oversize<'a>(text: &'a str, cap: usize, est: &dyn TokenEstimator) -> Vec<Unit<'a>> {
    let mut units = Vec::new();
    for sentence in split_sentences(text) {
        let tokens = est.estimate(sentence);
        if tokens <= cap {
            units.push(Unit { text: sentence, tokens, continues: true });
            continue;
        }
        let mut start = 0;
        let mut window_tokens = 0;
        for (i, ch) in sentence.char_indices() {
            let cost = est.estimate(ch.encode_utf8(&mut [0; 4]));
            if window_tokens + cost > cap && i > start {
                let piece = &sentence[start..i];
                units.push(Unit { text: piece, tokens: est.estimate(piece), continues: true });
                start = i;
                window_tokens = 0;
            }
            window_tokens += cost;
        }
        let piece = &sentence[start..];
        units.push(Unit { text: piece, tokens: est.estimate(piece), continues: true });
    }
    if let Some(first) = units.first_mut() {
        first.continues = false;
    }
    units
}

/// Greedily merges paragraphs under the same lowest-level heading into
/// pieces of roughly `target_tokens`, never exceeding `2 * target_tokens`.
pub fn chunk_document(
    doc: &Document,
    target_tokens: usize,
    estimator: &dyn TokenEstimator,
) -> Result<Vec<KnowledgePiece>, CorpusError> {
    if target_tokens < 16 {
        return Err(CorpusError::TargetTooSmall(target_tokens));
    }
    let cap = 2 * target_tokens;
    let mut pieces = Vec::new();
    let mut buffer = String::new();
    let mut buffer_tokens = 0usize;

    let mut emit = |buffer: &mut String, buffer_tokens: &mut usize, headings: &[String]| {
        if buffer.is_empty() {
            return;
        }
        let text = std::mem::take(buffer);
        *buffer_tokens = 0;
        if text.trim().is_empty() {
            return;
        }
        let id = format!("{}-{:04}", doc.id, pieces.len());
        let mut source = doc.id.clone();
        for heading in headings {
            source.push_str(" > ");
            source.push_str(heading);
        }
        let token_estimate = estimator.estimate(&text);
        pieces.push(KnowledgePiece { id, source, text, token_estimate });
    };

    let mut index = 0;
    while index < doc.paragraphs.len() {
        let headings = &doc.paragraphs[index].heading_path;
        let group_end = doc.paragraphs[index..]
            .iter()
            .position(|p| &p.heading_path != headings)
            .map_or(doc.paragraphs.len(), |offset| index + offset);

        for paragraph in &doc.paragraphs[index..group_end] {
            let tokens = estimator.estimate(&paragraph.text);
            if tokens == 0 {
                continue;
            }
            let units = if tokens > cap {
                split_oversize(&paragraph.text, cap, estimator)
            } else {
                vec![Unit { text: &paragraph.text, tokens, continues: false }]
            };
            for unit in units {
                if !buffer.is_empty() && buffer_tokens + unit.tokens > cap {
                    emit(&mut buffer, &mut buffer_tokens, headings);
                }
                if !buffer.is_empty() && !unit.continues {
                    buffer.push('\n');
                }
                buffer.push_str(unit.text);
                buffer_tokens += unit.tokens;
                if buffer_tokens >= target_tokens {
                    emit(&mut buffer, &mut buffer_tokens, headings);
                }
            }
        }
        emit(&mut buffer, &mut buffer_tokens, headings);
        index = group_end;
    }
    Ok(pieces)
}
