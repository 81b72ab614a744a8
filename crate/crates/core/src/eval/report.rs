//! Report persistence (JSON/CSV) and plain-text tables.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::buckets::StepBucket;
use crate::eval::grade::{ExamReport, REPORT_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` means CSV, anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Json,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a valid report: {detail}")]
    Parse { path: PathBuf, detail: String },
}

pub const CSV_HEADER: [&str; 9] =
    ["question_id", "category", "gold", "predicted", "correct", "sentence_count", "shots", "knowledge", "dropped"];

/// Pretty JSON with a trailing newline; byte-stable for equal reports.
pub fn report_to_json(report: &ExamReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    text
}

pub fn report_to_csv(report: &ExamReport) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER).expect("in-memory write");
    for r in &report.per_question {
        writer
            .write_record([
                r.question_id.clone(),
                r.category.to_string(),
                r.gold.to_string(),
                r.predicted.map(|p| p.to_string()).unwrap_or_default(),
                r.correct.to_string(),
                r.sentence_count.to_string(),
                r.prompt_meta.shots.to_string(),
                r.prompt_meta.knowledge.to_string(),
                r.prompt_meta.dropped.join(";"),
            ])
            .expect("in-memory write");
    }
    writer
        .write_record([
            "summary".to_owned(),
            format!("acc_mk={}", report.acc_mk),
            format!("acc_ca={}", report.acc_ca),
            format!("acc_all={}", report.acc_all),
            format!("passed={}", report.passed),
            format!("n_mk={}", report.n_mk),
            format!("n_ca={}", report.n_ca),
            format!("pass_threshold={}", report.pass_threshold),
            String::new(),
        ])
        .expect("in-memory write");
    String::from_utf8(writer.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

pub fn write_report(report: &ExamReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<(), ReportError> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Json => report_to_json(report),
        ReportFormat::Csv => report_to_csv(report),
    };
    let err = |source| ReportError::Write { path: path.to_owned(), source };
    let mut out = BufWriter::new(File::create(path).map_err(err)?);
    out.write_all(body.as_bytes()).map_err(err)?;
    out.flush().map_err(err)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ExamReport, ReportError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Read { path: path.to_owned(), source })?;
    let report: ExamReport =
        serde_json::from_str(&text).map_err(|e| ReportError::Parse { path: path.to_owned(), detail: e.to_string() })?;
    if report.schema != REPORT_SCHEMA {
        return Err(ReportError::Parse {
            path: path.to_owned(),
            detail: format!("unsupported schema {:?}", report.schema),
        });
    }
    Ok(report)
}

/// Human-readable summary of one report.
pub fn render_table(report: &ExamReport) -> String {
    let mut out = String::new();
    if let Some(label) = &report.label {
        let _ = writeln!(out, "{label}");
    }
    let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>9}", "", "Acc-MK", "Acc-CA", "Acc-All");
    let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>9}", "accuracy", report.acc_mk, report.acc_ca, report.acc_all);
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>8} {:>9}",
        "correct",
        format!("{}/{}", report.correct_mk, report.n_mk),
        format!("{}/{}", report.correct_ca, report.n_ca),
        format!("{}/{}", report.correct_mk + report.correct_ca, report.total()),
    );
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "threshold {} -> {verdict}", report.pass_threshold);
    let failures = report.failures();
    if failures > 0 {
        let _ = writeln!(out, "unanswered after errors: {failures}");
    }
    out
}

/// One row per labelled report, for ablation sweeps.
pub fn render_comparison(rows: &[(String, ExamReport)]) -> String {
    let width = rows.iter().map(|(label, _)| label.chars().count()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8} {:>8} {:>9}  {}", "sweep", "Acc-MK", "Acc-CA", "Acc-All", "pass");
    for (label, report) in rows {
        let pad = width - label.chars().count() + label.len();
        let _ = writeln!(
            out,
            "{:<pad$}  {:>8} {:>8} {:>9}  {}",
            label,
            report.acc_mk,
            report.acc_ca,
            report.acc_all,
            if report.passed { "yes" } else { "no" }
        );
    }
    out
}

/// Step-bucket table.
pub fn render_buckets(buckets: &[StepBucket]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>6} {:>15} {:>6} {:>9}", "bucket", "sentences", "count", "accuracy");
    for b in buckets {
        let accuracy = b.accuracy.map(|a| a.to_string()).unwrap_or_else(|| "-".to_owned());
        let range = format!("{:.2}-{:.2}", b.lower, b.upper);
        let _ = writeln!(out, "{:>6} {:>15} {:>6} {:>9}", b.index + 1, range, b.count, accuracy);
    }
    out
}
