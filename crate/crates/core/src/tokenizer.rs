//! Tokenization for BM25 indexing and token-count estimation for prompt budgeting.
//!
//! Latin letters and digits form word tokens (lowercased). Han characters are
//! indexed as unigrams plus bigrams with the immediately following Han
//! character, so both single-character terms and two-character phrases match.

use std::fmt;

/// A normalized index term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// True for Han ideographs (unified, extensions A-F, compatibility blocks).
pub fn is_cjk(ch: char) -> bool {
    matches!(
        ch as u32,
        0x4E00..=0x9FFF
            | 0x3400..=0x4DBF
            | 0x20000..=0x2A6DF
            | 0x2A700..=0x2EBEF
            | 0xF900..=0xFAFF
            | 0x2F800..=0x2FA1F
    )
}

fn is_word_char(ch: char) -> bool {
    ch.is_alphanumeric() && !is_cjk(ch)
}

/// Splits `text` into BM25 terms.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut chars = text.chars().peekable();

    while let Some(ch) = chars.next() {
        if is_word_char(ch) {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(Token(std::mem::take(&mut word)));
        }
        if is_cjk(ch) {
            tokens.push(Token(ch.to_string()));
            if let Some(&next) = chars.peek() {
                if is_cjk(next) {
                    let mut bigram = String::with_capacity(8);
                    bigram.push(ch);
                    bigram.push(next);
                    tokens.push(Token(bigram));
                }
            }
        }
    }
    if !word.is_empty() {
        tokens.push(Token(word));
    }
    tokens
}

/// Deterministic token-count estimator used for prompt budgeting.
///
/// Implementations must be subadditive under concatenation:
/// `estimate(a + b) <= estimate(a) + estimate(b)`.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// Counts each Han character, each maximal run of letters/digits, and each
/// punctuation or symbol character as one token. Whitespace is free.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicEstimator;

impl TokenEstimator for HeuristicEstimator {
    fn estimate(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for ch in text.chars() {
            if is_word_char(ch) {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
                continue;
            }
            in_word = false;
            if !ch.is_whitespace() {
                // Han characters and punctuation alike cost one token each.
                count += 1;
            }
        }
        count
    }
}

/// [`HeuristicEstimator`] applied to `text`.
pub fn estimate_tokens(text: &str) -> usize {
    HeuristicEstimator.estimate(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surfaces(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(Token::into_string).collect()
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn latin_words_are_lowercased() {
        assert_eq!(surfaces("BM25 Test"), ["bm25", "test"]);
    }

    #[test]
    fn cjk_unigrams_and_bigrams() {
        assert_eq!(surfaces("心肌梗"), ["心", "心肌", "肌", "肌梗", "梗"]);
    }

    #[test]
    fn bigrams_do_not_cross_punctuation_or_latin() {
        assert_eq!(surfaces("肝，肾"), ["肝", "肾"]);
        assert_eq!(surfaces("α受体"), ["α", "受", "受体", "体"]);
        assert_eq!(surfaces("血ECG压"), ["血", "ecg", "压"]);
    }

    #[test]
    fn estimator_examples() {
        assert_eq!(estimate_tokens("abc def"), 2);
        assert_eq!(estimate_tokens("急性心肌梗死诊断依据ECG"), 11);
        assert_eq!(estimate_tokens("答案：B。"), 5);
    }

    proptest! {
        #[test]
        fn tokens_are_nonempty_and_whitespace_free(text in "\\PC{0,64}") {
            for token in tokenize(&text) {
                prop_assert!(!token.as_str().is_empty());
                prop_assert!(!token.as_str().chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn estimator_is_subadditive(a in "\\PC{0,48}", b in "\\PC{0,48}") {
            let joined = format!("{a}{b}");
            prop_assert!(estimate_tokens(&joined) <= estimate_tokens(&a) + estimate_tokens(&b));
        }

        #[test]
        fn tokenize_is_deterministic(text in "[a-zA-Z0-9 心肌梗死，。]{0,40}") {
            prop_assert_eq!(tokenize(&text), tokenize(&text));
        }
    }
}
