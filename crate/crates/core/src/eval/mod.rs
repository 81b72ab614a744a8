//! Answer extraction, grading, step-bucket analysis and report output.

pub mod buckets;
pub mod extract;
pub mod grade;
pub mod report;

pub use buckets::{bucket_by_steps, StepBucket};
pub use extract::extract_answer;
pub use grade::{
    grade, sentence_count, Accuracy, ExamReport, GradeError, Percent, PromptMeta, QuestionOutcome, QuestionResult,
    REPORT_SCHEMA,
};
pub use report::{
    read_report, render_buckets, render_comparison, render_table, report_to_csv, report_to_json, write_report,
    ReportError, ReportFormat,
};
