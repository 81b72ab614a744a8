#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kfe_core::corpus::{load_exam, load_question_bank, ExamQuestion, OptionLabel};
use kfe_core::llm::{MockReply, MockServer};
use serde_json::Value;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn kfe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfe")).current_dir(dir).args(args).output().expect("kfe runs")
}

pub fn kfe_ok(dir: &Path, args: &[&str]) -> Output {
    let out = kfe(dir, args);
    assert!(
        out.status.success(),
        "kfe {args:?} exited with {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Copies the fixtures into a fresh directory and builds both indexes there.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in ["exam.jsonl", "bank.jsonl", "knowledge.jsonl", "textbook.md", "config.toml", "store.jsonl"] {
        let src = fixtures().join(name);
        if src.exists() {
            std::fs::copy(&src, dir.path().join(name)).unwrap();
        }
    }
    kfe_ok(dir.path(), &["index", "--kind", "knowledge", "--input", "knowledge.jsonl", "--out", "knowledge.idx"]);
    kfe_ok(dir.path(), &["index", "--kind", "bank", "--input", "bank.jsonl", "--out", "bank.idx"]);
    dir
}

/// Every fixture question (exam and bank) keyed by stem.
pub fn questions_by_stem() -> HashMap<String, ExamQuestion> {
    let exam = load_exam(fixtures().join("exam.jsonl")).unwrap().value;
    let bank = load_question_bank(fixtures().join("bank.jsonl")).unwrap().value;
    exam.questions().iter().chain(bank.entries()).map(|q| (q.stem.clone(), q.clone())).collect()
}

/// Stem of the question a prompt asks about: the first line after the last
/// question header, or after the last blank line when there is none.
pub fn asked_stem(prompt: &str) -> &str {
    let block = match prompt.rfind("题目：\n") {
        Some(i) => &prompt[i + "题目：\n".len()..],
        None => prompt.rsplit("\n\n").next().unwrap_or(prompt),
    };
    block.lines().next().unwrap_or_default()
}

/// Zero-shot prompts on these questions get a wrong answer.
pub const HARD: [&str; 5] = ["mk03", "mk07", "ca02", "ca05", "ca11"];

fn wrong(label: OptionLabel) -> OptionLabel {
    OptionLabel::from_index((label.index() + 1) % 5).unwrap()
}

/// Deterministic stand-in for the model used to record the fixture store.
///
/// Prompts with knowledge or examples are answered correctly; bare prompts
/// miss the `HARD` questions. Reply wording varies with the question id.
pub fn scripted_reply(questions: &HashMap<String, ExamQuestion>, request: &Value) -> MockReply {
    let prompt = MockServer::prompt_of(request);
    if let Some(option) = prompt.strip_prefix('“').and_then(|p| p.split('”').next()) {
        return MockReply::ok(format!("“{option}”是一个医学术语，指与该病症相关的临床概念。"));
    }
    let Some(question) = questions.get(asked_stem(prompt)) else {
        return MockReply::ok("无法判断。");
    };
    let gold = question.answer.unwrap_or(OptionLabel::A);
    if prompt.contains("请分析为什么正确答案是") {
        return MockReply::ok(format!(
            "题干描述与{}相符。其余选项与题干不符。因此正确答案是{gold}。",
            question.option(gold)
        ));
    }
    let enhanced = prompt.contains("相关医学知识：") || prompt.contains("参考例题：");
    let label = if !enhanced && HARD.contains(&question.id.as_str()) { wrong(gold) } else { gold };
    if request["max_tokens"] == 1 {
        return MockReply::ok(label.to_string());
    }
    let n: usize = question.id.bytes().map(usize::from).sum();
    let text = match n % 3 {
        0 => format!("答案：{label}"),
        1 => format!("{label}"),
        _ => format!("根据题干信息，{}最符合。故选{label}。", question.option(label)),
    };
    MockReply::ok(text)
}

pub fn scripted_server() -> MockServer {
    let questions = questions_by_stem();
    MockServer::start(move |request| scripted_reply(&questions, request)).unwrap()
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}
