#![allow(dead_code)]

//! Brute-force reference implementations and random generators shared by
//! the integration tests.

use std::collections::HashSet;

use kfe_core::corpus::{Document, ExamQuestion, OptionLabel, Paragraph};
use kfe_core::tokenizer::TokenEstimator;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Scores every document term by term, straight from the raw token lists.
pub fn bm25_oracle(docs: &[(String, Vec<String>)], query: &[String], k: usize, exclude: &HashSet<String>) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let mut scored = Vec::new();
    for (id, tokens) in docs {
        if exclude.contains(id) {
            continue;
        }
        let mut score = 0.0;
        for term in query {
            let tf = tokens.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|(_, t)| t.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let dl = tokens.len() as f64;
            score += idf * (tf * (K1 + 1.0)) / (tf + K1 * (1.0 - B + B * dl / avgdl));
        }
        if score > 0.0 {
            scored.push((id.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Compares a ranking against the oracle. Ids may only differ where the
/// two scores tie within `tol`.
pub fn same_ranking(got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} hits, oracle has {}", got.len(), want.len()));
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        if !rel_close(g.1, w.1, tol) {
            return Err(format!("rank {}: score {} vs oracle {}", i + 1, g.1, w.1));
        }
        if g.0 != w.0 {
            let tied = want.iter().any(|(id, s)| id == &g.0 && rel_close(*s, w.1, tol));
            if !tied {
                return Err(format!("rank {}: {} vs oracle {}", i + 1, g.0, w.0));
            }
        }
    }
    Ok(())
}

const WORDS: [&str; 12] = ["ecg", "st", "ct", "mri", "hbv", "alt", "ast", "ph", "pco2", "iga", "igm", "crp"];
const HAN: &str = "心肝肺肾脾胃肠血压糖尿病炎症感染急慢性发热疼痛咳嗽呕吐治疗诊断";

/// Text mixing Latin words, digits and Han characters, with a skewed
/// vocabulary so terms repeat across documents.
pub fn random_text(rng: &mut impl Rng, max_len: usize) -> String {
    let han: Vec<char> = HAN.chars().collect();
    let len = rng.random_range(1..=max_len);
    let mut text = String::new();
    for _ in 0..len {
        match rng.random_range(0..10) {
            0..=2 => {
                text.push(' ');
                text.push_str(WORDS[rng.random_range(0..WORDS.len()).min(rng.random_range(0..WORDS.len()))]);
                text.push(' ');
            }
            3 => text.push_str(&format!(" {} ", rng.random_range(0..20))),
            4 => text.push('，'),
            _ => text.push(han[rng.random_range(0..han.len()).min(rng.random_range(0..han.len()))]),
        }
    }
    text
}

pub struct BmCase {
    pub docs: Vec<(String, String)>,
    pub query: String,
    pub k: usize,
    pub exclude: HashSet<String>,
}

pub fn random_bm_case(rng: &mut impl Rng) -> BmCase {
    let n = rng.random_range(1..=100);
    let docs: Vec<(String, String)> = (0..n).map(|i| (format!("d{i:03}"), random_text(rng, 40))).collect();
    let query = random_text(rng, 12);
    let k = rng.random_range(0..=n + 2);
    let exclude = docs.iter().filter(|_| rng.random_bool(0.05)).map(|(id, _)| id.clone()).collect();
    BmCase { docs, query, k, exclude }
}

/// Greedy merge under one heading: flush before a paragraph that would
/// overflow `2 * target`, flush once the buffer reaches `target`.
/// Handles only paragraphs that fit the cap on their own.
pub fn chunk_oracle(doc: &Document, target: usize, est: &dyn TokenEstimator) -> Vec<(Vec<String>, Vec<usize>)> {
    let cap = 2 * target;
    let mut pieces: Vec<(Vec<String>, Vec<usize>)> = Vec::new();
    let mut buffer: Vec<usize> = Vec::new();
    let mut total = 0;
    let mut heading: Option<&Vec<String>> = None;
    let flush = |pieces: &mut Vec<(Vec<String>, Vec<usize>)>, buffer: &mut Vec<usize>, total: &mut usize, h: &Vec<String>| {
        if !buffer.is_empty() {
            pieces.push((h.clone(), std::mem::take(buffer)));
        }
        *total = 0;
    };
    for (i, p) in doc.paragraphs.iter().enumerate() {
        if let Some(h) = heading.filter(|h| **h != p.heading_path) {
            flush(&mut pieces, &mut buffer, &mut total, h);
        }
        heading = Some(&p.heading_path);
        let t = est.estimate(&p.text);
        assert!(t <= cap, "oracle only covers paragraphs within the cap");
        if t == 0 {
            continue;
        }
        if !buffer.is_empty() && total + t > cap {
            flush(&mut pieces, &mut buffer, &mut total, &p.heading_path);
        }
        buffer.push(i);
        total += t;
        if total >= target {
            flush(&mut pieces, &mut buffer, &mut total, &p.heading_path);
        }
    }
    if let Some(h) = heading {
        flush(&mut pieces, &mut buffer, &mut total, h);
    }
    pieces
}

/// Han paragraph of roughly `tokens` tokens made of short sentences.
pub fn han_paragraph(rng: &mut impl Rng, tokens: usize) -> String {
    let han: Vec<char> = HAN.chars().collect();
    let mut text = String::new();
    let mut used = 0;
    while used < tokens {
        let run = rng.random_range(4..=12).min(tokens - used);
        if run == 0 {
            break;
        }
        for _ in 0..run.saturating_sub(1) {
            text.push(*han.choose(rng).unwrap());
        }
        text.push('。');
        used += run.max(1);
    }
    text
}

/// Book with `paragraphs` paragraphs spread over `headings` two-level headings.
pub fn synthetic_book(rng: &mut impl Rng, paragraphs: usize, headings: usize, mean_tokens: usize) -> Document {
    let per_heading = paragraphs / headings;
    let mut out = Vec::new();
    for h in 0..headings {
        let path = vec![format!("第{}章", h / 5 + 1), format!("第{}节", h + 1)];
        for _ in 0..per_heading {
            let tokens = rng.random_range(mean_tokens - 15..=mean_tokens + 15);
            out.push(Paragraph { heading_path: path.clone(), text: han_paragraph(rng, tokens) });
        }
    }
    Document { id: "book".into(), paragraphs: out }
}

pub fn random_question(rng: &mut impl Rng, id: &str) -> ExamQuestion {
    ExamQuestion {
        id: id.into(),
        stem: random_text(rng, 60),
        options: std::array::from_fn(|_| random_text(rng, 8)),
        answer: OptionLabel::from_index(rng.random_range(0..5)),
        category: None,
    }
}
