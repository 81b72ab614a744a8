//! Answer extraction from free-form model responses.

use crate::corpus::OptionLabel;
use crate::tokenizer::is_cjk;

const MARKERS: [&str; 3] = ["答案", "选", "answer"];

/// Characters allowed between an answer marker and the label.
fn is_filler(ch: char) -> bool {
    ch.is_whitespace() || "：:是为應应该当选择项即故此（(“\"'【「『】」』）)”=-\u{2014}\u{2013}".contains(ch)
}

/// Label as written right after a marker: upper-case ASCII or full-width.
fn marker_label(ch: char) -> Option<OptionLabel> {
    if ch.is_ascii_lowercase() || ('ａ'..='ｅ').contains(&ch) {
        return None;
    }
    OptionLabel::from_char(ch)
}

/// A label must stand alone: "B超" or "Bx" are words, not answers.
fn ends_label(next: Option<char>) -> bool {
    match next {
        None => true,
        Some(c) if c.is_ascii_alphanumeric() => false,
        Some(c) if is_cjk(c) => c == '项' || c == '选',
        Some(_) => true,
    }
}

fn marker_hits(text: &str) -> Vec<(usize, OptionLabel)> {
    // ASCII lowering keeps byte offsets aligned with `text`.
    let haystack = text.to_ascii_lowercase();
    let mut hits = Vec::new();
    for marker in MARKERS {
        for (start, _) in haystack.match_indices(marker) {
            let rest = &text[start + marker.len()..];
            if marker == "选" && rest.starts_with('项') {
                continue;
            }
            let mut chars = rest.char_indices().peekable();
            let mut skipped = 0;
            while let Some(&(i, c)) = chars.peek() {
                if skipped >= 8 {
                    break;
                }
                if is_filler(c) {
                    chars.next();
                    skipped += 1;
                    continue;
                }
                // English copula: "answer is B".
                if rest[i..].get(..2).is_some_and(|w| w.eq_ignore_ascii_case("is")) {
                    let after = rest[i + 2..].chars().next();
                    if after.is_some_and(|a| a.is_whitespace() || a == ':') {
                        chars.next();
                        chars.next();
                        skipped += 1;
                        continue;
                    }
                }
                break;
            }
            let Some((i, c)) = chars.next() else { continue };
            let Some(label) = marker_label(c) else { continue };
            if ends_label(rest[i + c.len_utf8()..].chars().next()) {
                hits.push((start + marker.len() + i, label));
            }
        }
    }
    hits.sort_by_key(|&(pos, _)| pos);
    hits
}

fn trim_noise(text: &str) -> &str {
    text.trim_matches(|c: char| c.is_whitespace() || "。.，,：:！!（）()【】\"“”'".contains(c))
}

/// Extracts the chosen option from a response. Rules, first match wins:
///
/// 1. a label next to an answer marker (`答案`, `选`, `answer`); the last one counts
/// 2. the whole response is a single label
/// 3. exactly one option's full text appears verbatim
pub fn extract_answer(response: &str, options: &[String; 5]) -> Option<OptionLabel> {
    if let Some(&(_, label)) = marker_hits(response).last() {
        return Some(label);
    }
    if let Some(label) = OptionLabel::parse(trim_noise(response)) {
        return Some(label);
    }
    let mut found = OptionLabel::ALL
        .into_iter()
        .zip(options)
        .filter(|(_, text)| !text.trim().is_empty() && response.contains(text.trim()));
    match (found.next(), found.next()) {
        (Some((label, _)), None) => Some(label),
        _ => None,
    }
}
