use kfe_core::corpus::{Category, Exam, ExamQuestion, OptionLabel};
use kfe_core::eval::{grade, ExamReport, Percent, QuestionOutcome};
use proptest::prelude::*;

fn exam(n_mk: usize, n_ca: usize) -> Exam {
    let questions = (0..n_mk + n_ca)
        .map(|i| ExamQuestion {
            id: format!("q{i:03}"),
            stem: format!("题{i}"),
            options: ["甲", "乙", "丙", "丁", "戊"].map(String::from),
            answer: Some(OptionLabel::C),
            category: Some(if i < n_mk { Category::MedicalKnowledge } else { Category::CaseAnalysis }),
        })
        .collect();
    Exam::new(questions).unwrap()
}

/// The first `c_mk` MK and `c_ca` CA questions answered correctly, the rest wrongly.
fn run(n_mk: usize, n_ca: usize, c_mk: usize, c_ca: usize) -> ExamReport {
    let exam = exam(n_mk, n_ca);
    let outcomes: Vec<QuestionOutcome> = exam
        .questions()
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let right = if i < n_mk { i < c_mk } else { i - n_mk < c_ca };
            QuestionOutcome {
                question_id: q.id.clone(),
                response_text: Some(if right { "答案：C" } else { "答案：A" }.into()),
                ..QuestionOutcome::default()
            }
        })
        .collect();
    grade(&outcomes, &exam, Percent::from_whole(60)).unwrap()
}

fn half_up(num: u64, den: u64) -> String {
    let hundredths = (num * 10_000 * 2 + den) / (den * 2);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Every (c_mk, c_ca) over the 181/313 split whose three rounded
/// percentages match the targets.
fn recover_counts(targets: [&str; 3]) -> Vec<(u64, u64)> {
    let mut hits = Vec::new();
    for c_mk in 0..=181u64 {
        for c_ca in 0..=313u64 {
            if [half_up(c_mk, 181), half_up(c_ca, 313), half_up(c_mk + c_ca, 494)] == targets {
                hits.push((c_mk, c_ca));
            }
        }
    }
    hits
}

#[test]
fn derived_counts_round_trip() {
    assert_eq!(181 + 313, 494);
    assert_eq!(recover_counts(["72.93", "68.37", "70.04"]), vec![(132, 214)]);
    assert_eq!(recover_counts(["62.43", "57.51", "59.31"]), vec![(113, 180)]);
}

#[test]
fn best_configuration_percentages() {
    let r = run(181, 313, 132, 214);
    assert_eq!([r.acc_mk.to_string(), r.acc_ca.to_string(), r.acc_all.to_string()], ["72.93", "68.37", "70.04"]);
    assert!(r.passed);
}

#[test]
fn correct_answer_only_percentages() {
    let r = run(181, 313, 113, 180);
    assert_eq!([r.acc_mk.to_string(), r.acc_ca.to_string(), r.acc_all.to_string()], ["62.43", "57.51", "59.31"]);
    assert!(!r.passed);
}

proptest! {
    #[test]
    fn overall_lies_between_categories(n_mk in 1usize..60, n_ca in 1usize..60, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (c_mk, c_ca) = ((a * n_mk as f64) as usize, (b * n_ca as f64) as usize);
        let r = run(n_mk, n_ca, c_mk, c_ca);
        let (lo, hi) = if r.acc_mk <= r.acc_ca { (r.acc_mk, r.acc_ca) } else { (r.acc_ca, r.acc_mk) };
        prop_assert!(lo <= r.acc_all && r.acc_all <= hi);
        prop_assert_eq!(r.acc_all.to_string(), half_up((c_mk + c_ca) as u64, (n_mk + n_ca) as u64));
        prop_assert_eq!(r.passed, r.acc_all >= r.pass_threshold);
        prop_assert_eq!(r.passed, (c_mk + c_ca) * 100 >= 60 * (n_mk + n_ca));
    }
}

fn shuffled_exam(n_mk: usize, n_ca: usize, seed: u64) -> (Exam, Exam) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let exam = exam(n_mk, n_ca);
    let mut questions = exam.questions().to_vec();
    questions.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    (exam, Exam::new(questions).unwrap())
}

proptest! {
    #[test]
    fn order_does_not_change_aggregates(n_mk in 1usize..30, n_ca in 1usize..30, seed in any::<u64>(), mask in any::<u64>()) {
        let (exam, permuted) = shuffled_exam(n_mk, n_ca, seed);
        let outcomes: Vec<QuestionOutcome> = exam
            .questions()
            .iter()
            .enumerate()
            .map(|(i, q)| QuestionOutcome {
                question_id: q.id.clone(),
                response_text: Some(if mask >> (i % 64) & 1 == 1 { "C" } else { "E" }.into()),
                ..QuestionOutcome::default()
            })
            .collect();
        let mut reversed = outcomes.clone();
        reversed.reverse();
        let a = grade(&outcomes, &exam, Percent::from_whole(60)).unwrap();
        let b = grade(&reversed, &permuted, Percent::from_whole(60)).unwrap();
        prop_assert_eq!((a.acc_mk, a.acc_ca, a.acc_all, a.passed), (b.acc_mk, b.acc_ca, b.acc_all, b.passed));

        // Recount from the per-question records.
        let correct = a.per_question.iter().filter(|q| q.correct).count();
        prop_assert_eq!(a.acc_all, Percent::of(correct, a.per_question.len()));
        prop_assert!(a.per_question.iter().all(|q| q.correct == (q.predicted == Some(q.gold))));
    }
}
