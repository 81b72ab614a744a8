mod support;

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use kfe_core::corpus::{Category, Exam, ExamQuestion, KnowledgePiece, OptionLabel};
use kfe_core::eval::ExamReport;
use kfe_core::fewshot::Strategy;
use kfe_core::llm::{LlmError, ScriptedModel};
use kfe_core::pipeline::{run_exam, Resources, RunConfig, SourceKind};
use kfe_core::prompt::PromptBuilder;
use kfe_core::retrieval::Bm25Params;
use kfe_core::tokenizer::HeuristicEstimator;
use kfe_core::{BankIndex, KnowledgeIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

fn questions(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> Vec<ExamQuestion> {
    (0..n)
        .map(|i| {
            let mut q = random_question(rng, &format!("{prefix}{i:02}"));
            q.stem = format!("〔{prefix}{i:02}〕{}", q.stem);
            q.category = Some(if i % 3 == 0 { Category::CaseAnalysis } else { Category::MedicalKnowledge });
            q
        })
        .collect()
}

fn resources(bank_is_exam: bool) -> Resources {
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    let exam = questions(&mut rng, "x", 30);
    let bank = if bank_is_exam { exam.clone() } else { questions(&mut rng, "b", 60) };
    let knowledge: Vec<KnowledgePiece> = (0..40)
        .map(|i| KnowledgePiece::new(format!("k{i:02}"), "s", random_text(&mut rng, 80), &HeuristicEstimator).unwrap())
        .collect();
    Resources {
        exam: Exam::new(exam).unwrap(),
        knowledge: Some(KnowledgeIndex::build(knowledge, Bm25Params::default()).unwrap()),
        bank: Some(BankIndex::build(bank, Bm25Params::default()).unwrap()),
        builder: PromptBuilder::default(),
    }
}

fn config(strategy: Strategy, shots: usize) -> RunConfig {
    let mut config = RunConfig { strategy, num_shots: shots, use_knowledge: true, ..RunConfig::default() };
    config.llm.max_concurrency = 8;
    config
}

fn hash(text: &str) -> u64 {
    text.bytes().fold(17u64, |h, b| h.wrapping_mul(131).wrapping_add(u64::from(b)))
}

/// Answers by prompt hash; fails on roughly `fail_per_mille` of prompts.
fn model(fail_per_mille: u64, log: Arc<Mutex<Vec<(String, bool)>>>) -> ScriptedModel {
    ScriptedModel::new(move |prompt, params| {
        log.lock().unwrap().push((prompt.to_owned(), params.is_constrained()));
        let h = hash(prompt);
        if h % 1000 < fail_per_mille {
            return Err(LlmError::Scripted("injected failure".into()));
        }
        Ok(format!("答案：{}", OptionLabel::from_index((h % 5) as usize).unwrap()))
    })
}

fn ids(report: &ExamReport) -> Vec<&str> {
    report.per_question.iter().map(|q| q.question_id.as_str()).collect()
}

#[test]
fn injected_failures_stay_per_question() {
    let resources = resources(false);
    let log = Arc::default();
    let report = run_exam(&config(Strategy::CorrectAnsPlusInference, 3), &resources, &model(100, log), None).unwrap();
    let want: Vec<&str> = resources.exam.questions().iter().map(|q| q.id.as_str()).collect();
    assert_eq!(ids(&report), want);
    let failed: Vec<_> = report.per_question.iter().filter(|q| q.error.is_some()).collect();
    assert!(!failed.is_empty() && failed.len() < 30, "{} failures", failed.len());
    assert!(failed.iter().all(|q| !q.correct && q.predicted.is_none()));
    assert_eq!(report.failures(), failed.len());
}

#[test]
fn call_counts_and_decoding_modes() {
    let resources = resources(false);
    for (strategy, per_question) in
        [(Strategy::CorrectAns, 1), (Strategy::GeneratedAns, 4), (Strategy::CorrectAnsPlusInference, 4)]
    {
        let log = Arc::new(Mutex::new(Vec::new()));
        let mut cfg = config(strategy, 3);
        cfg.constrained = true;
        let report = run_exam(&cfg, &resources, &model(0, log.clone()), None).unwrap();
        assert!(report.per_question.iter().all(|q| q.llm_calls == per_question), "{strategy}");
        let log = log.lock().unwrap();
        let constrained = log.iter().filter(|(_, c)| *c).count();
        assert_eq!(constrained, 30, "{strategy}");
        assert!(log.iter().filter(|(_, c)| *c).all(|(p, _)| p.contains("题目：")));
    }
}

#[test]
fn random_examples_are_seeded_and_exclude_the_question() {
    let resources = resources(true);
    let prompts_for = |seed: u64, shots: usize| {
        let log = Arc::new(Mutex::new(Vec::new()));
        let mut cfg = config(Strategy::CorrectAns, shots);
        cfg.use_knowledge = false;
        cfg.example_source = SourceKind::Random;
        cfg.seed = Some(seed);
        cfg.budget = 1_000_000;
        run_exam(&cfg, &resources, &model(0, log.clone()), None).unwrap();
        let prompts: HashSet<String> = log.lock().unwrap().iter().map(|(p, _)| p.clone()).collect();
        prompts
    };
    assert_eq!(prompts_for(1, 5), prompts_for(1, 5));
    assert_ne!(prompts_for(1, 5), prompts_for(2, 5));
    // Asking for every other question: each appears once, the target once.
    for prompt in prompts_for(3, 29) {
        for q in resources.exam.questions() {
            assert_eq!(prompt.matches(&format!("〔{}〕", q.id)).count(), 1);
        }
    }
}

#[test]
fn resume_keeps_answered_questions() {
    let resources = resources(false);
    let cfg = config(Strategy::CorrectAns, 2);
    let first = run_exam(&cfg, &resources, &model(300, Arc::default()), None).unwrap();
    assert!(first.failures() > 0);
    let log = Arc::new(Mutex::new(Vec::new()));
    let second = run_exam(&cfg, &resources, &model(0, log.clone()), Some(&first)).unwrap();
    assert_eq!(second.failures(), 0);
    assert_eq!(log.lock().unwrap().len(), first.failures());
    for (a, b) in first.per_question.iter().zip(&second.per_question) {
        if a.error.is_none() {
            assert_eq!(a, b);
        }
    }
}
