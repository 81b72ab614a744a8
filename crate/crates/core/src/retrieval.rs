//! Okapi BM25 inverted index over knowledge pieces or question-bank entries.
//!
//! Score of a document `d` for query terms `t` (counted with multiplicity):
//!
//! ```text
//! sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
//! idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
//! ```
//!
//! Hits with zero score are dropped; ties are broken by ascending document id.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ExamQuestion, KnowledgePiece, OptionLabel};
use crate::scalar::Scalar;
use crate::tokenizer::{tokenize, Token};

/// Header line of a persisted index file.
pub const INDEX_MAGIC: &str = "KFEIDX1";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("unknown document id {0:?}")]
    UnknownDoc(String),
    #[error("invalid BM25 parameters: k1 must be > 0 and b within [0, 1]")]
    InvalidParams,
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a {expected} index file ({detail})")]
    Format { path: PathBuf, expected: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Bm25Params<S> {
    pub k1: S,
    pub b: S,
}

impl<S: Scalar> Default for Bm25Params<S> {
    fn default() -> Self {
        Self { k1: S::lit(1.2), b: S::lit(0.75) }
    }
}

impl<S: Scalar> Bm25Params<S> {
    pub fn new(k1: S, b: S) -> Result<Self, RetrievalError> {
        if !(k1 > S::zero()) || !(b >= S::zero() && b <= S::one()) {
            return Err(RetrievalError::InvalidParams);
        }
        Ok(Self { k1, b })
    }
}

/// `(document ordinal, term frequency)`. Ordinals follow ascending id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredHit<S> {
    pub doc_id: String,
    pub score: S,
    /// 1-based.
    pub rank: usize,
}

/// The inverted index proper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RetrievalIndex<S> {
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avg_doc_length: S,
    params: Bm25Params<S>,
}

impl<S: Scalar> RetrievalIndex<S> {
    /// Builds the index from `(id, text)` pairs.
    pub fn build<I, T>(docs: I, params: Bm25Params<S>) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (String, T)>,
        T: AsRef<str>,
    {
        let tokenized = docs.into_iter().map(|(id, text)| (id, tokenize(text.as_ref()))).collect();
        Self::from_tokens(tokenized, params)
    }

    /// Builds the index from pre-tokenized documents.
    pub fn from_tokens(mut docs: Vec<(String, Vec<Token>)>, params: Bm25Params<S>) -> Result<Self, RetrievalError> {
        if docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(pair) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(RetrievalError::DuplicateId(pair[0].0.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut total_len: u64 = 0;

        for (ordinal, (id, tokens)) in docs.into_iter().enumerate() {
            let ordinal = u32::try_from(ordinal).expect("corpus fits in u32 ordinals");
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for token in &tokens {
                *counts.entry(token.as_str().to_owned()).or_default() += 1;
            }
            for (term, tf) in counts {
                // Ordinals increase monotonically, so each list stays sorted.
                postings.entry(term).or_default().push(Posting { doc: ordinal, tf });
            }
            let len = u32::try_from(tokens.len()).expect("document length fits in u32");
            total_len += u64::from(len);
            doc_lengths.push(len);
            doc_ids.push(id);
        }

        let avg_doc_length = <S as Scalar>::from_usize(total_len as usize) / <S as Scalar>::from_usize(doc_ids.len());
        Ok(Self { doc_ids, doc_lengths, postings, avg_doc_length, params })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> S {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params<S> {
        self.params
    }

    /// Document ids in ascending order.
    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    fn ordinal(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids.binary_search_by(|id| id.as_str().cmp(doc_id)).ok().map(|i| i as u32)
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.ordinal(doc_id).map(|o| self.doc_lengths[o as usize])
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    /// All terms with their postings, in term order.
    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn idf(&self, df: usize) -> S {
        let half = S::lit(0.5);
        let n = <S as Scalar>::from_usize(self.doc_count());
        let df = <S as Scalar>::from_usize(df);
        (S::one() + (n - df + half) / (df + half)).ln()
    }

    fn term_weight(&self, idf: S, tf: u32, doc_len: u32) -> S {
        let Bm25Params { k1, b } = self.params;
        let tf = <S as Scalar>::from_usize(tf as usize);
        let dl = <S as Scalar>::from_usize(doc_len as usize);
        let norm = k1 * (S::one() - b + b * dl / self.avg_doc_length);
        idf * tf * (k1 + S::one()) / (tf + norm)
    }

    /// BM25 score of one document for the given query terms.
    pub fn score(&self, query_tokens: &[Token], doc_id: &str) -> Result<S, RetrievalError> {
        let ordinal = self.ordinal(doc_id).ok_or_else(|| RetrievalError::UnknownDoc(doc_id.to_owned()))?;
        let doc_len = self.doc_lengths[ordinal as usize];
        let mut total = S::zero();
        for token in query_tokens {
            let Some(list) = self.postings.get(token.as_str()) else { continue };
            if let Ok(pos) = list.binary_search_by_key(&ordinal, |p| p.doc) {
                total = total + self.term_weight(self.idf(list.len()), list[pos].tf, doc_len);
            }
        }
        Ok(total)
    }

    /// Top `k` documents for `query_text` with positive score, excluding `exclude`.
    pub fn top_k(&self, query_text: &str, k: usize, exclude: &HashSet<String>) -> Vec<ScoredHit<S>> {
        self.top_k_tokens(&tokenize(query_text), k, exclude)
    }

    pub fn top_k_tokens(&self, query_tokens: &[Token], k: usize, exclude: &HashSet<String>) -> Vec<ScoredHit<S>> {
        if k == 0 {
            return Vec::new();
        }
        let mut scores = vec![S::zero(); self.doc_count()];
        let mut touched: Vec<u32> = Vec::new();
        for token in query_tokens {
            let Some(list) = self.postings.get(token.as_str()) else { continue };
            let idf = self.idf(list.len());
            for posting in list {
                let slot = &mut scores[posting.doc as usize];
                if *slot == S::zero() {
                    touched.push(posting.doc);
                }
                *slot = *slot + self.term_weight(idf, posting.tf, self.doc_lengths[posting.doc as usize]);
            }
        }
        touched.sort_unstable();
        touched.dedup();

        let mut hits: Vec<(u32, S)> = touched
            .into_iter()
            .map(|doc| (doc, scores[doc as usize]))
            .filter(|&(doc, score)| score > S::zero() && !exclude.contains(&self.doc_ids[doc as usize]))
            .collect();
        hits.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits.into_iter()
            .enumerate()
            .map(|(i, (doc, score))| ScoredHit { doc_id: self.doc_ids[doc as usize].clone(), score, rank: i + 1 })
            .collect()
    }
}

/// A record type that can be stored in a [`DocumentIndex`].
pub trait Indexable: Clone + Serialize + DeserializeOwned {
    /// Kind tag written into the index file.
    const KIND: &'static str;

    fn doc_id(&self) -> &str;

    fn index_text(&self) -> String;
}

impl Indexable for KnowledgePiece {
    const KIND: &'static str = "knowledge";

    fn doc_id(&self) -> &str {
        &self.id
    }

    fn index_text(&self) -> String {
        self.text.clone()
    }
}

impl Indexable for ExamQuestion {
    const KIND: &'static str = "bank";

    fn doc_id(&self) -> &str {
        &self.id
    }

    fn index_text(&self) -> String {
        self.full_text()
    }
}

/// An index bundled with the records it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar, D: Indexable")]
pub struct DocumentIndex<D, S> {
    index: RetrievalIndex<S>,
    /// Sorted by id, parallel to `index.doc_ids`.
    docs: Vec<D>,
}

#[derive(Serialize, Deserialize)]
struct IndexFileBody<T> {
    kind: String,
    #[serde(flatten)]
    body: T,
}

impl<D: Indexable, S: Scalar> DocumentIndex<D, S> {
    pub fn build(mut docs: Vec<D>, params: Bm25Params<S>) -> Result<Self, RetrievalError> {
        docs.sort_by(|a, b| a.doc_id().cmp(b.doc_id()));
        let index = RetrievalIndex::build(docs.iter().map(|d| (d.doc_id().to_owned(), d.index_text())), params)?;
        Ok(Self { index, docs })
    }

    pub fn index(&self) -> &RetrievalIndex<S> {
        &self.index
    }

    pub fn docs(&self) -> &[D] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&D> {
        self.index.ordinal(doc_id).map(|o| &self.docs[o as usize])
    }

    pub fn search(&self, query_text: &str, k: usize, exclude: &HashSet<String>) -> Vec<(&D, ScoredHit<S>)> {
        self.index
            .top_k(query_text, k, exclude)
            .into_iter()
            .map(|hit| (self.get(&hit.doc_id).expect("hit ids come from the index"), hit))
            .collect()
    }

    /// Writes the `KFEIDX1` header line followed by a JSON body.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        let io = |source| RetrievalError::Io { path: path.to_owned(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "{INDEX_MAGIC}").map_err(io)?;
        let body = IndexFileBody { kind: D::KIND.to_owned(), body: self };
        serde_json::to_writer(&mut out, &body).map_err(|e| io(e.into()))?;
        writeln!(out).map_err(io)?;
        out.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let format_err = |detail: String| RetrievalError::Format {
            path: path.to_owned(),
            expected: D::KIND.to_owned(),
            detail,
        };
        let file = File::open(path).map_err(|source| RetrievalError::Io { path: path.to_owned(), source })?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|source| RetrievalError::Io { path: path.to_owned(), source })?;
        if header.trim_end() != INDEX_MAGIC {
            return Err(format_err(format!("bad header {:?}", header.trim_end())));
        }
        let body: IndexFileBody<Self> = serde_json::from_reader(reader).map_err(|e| format_err(e.to_string()))?;
        if body.kind != D::KIND {
            return Err(format_err(format!("file holds a {} index", body.kind)));
        }
        Ok(body.body)
    }
}

/// Result slot for one option of a question.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSlot<'a, S> {
    pub label: OptionLabel,
    pub piece: Option<&'a KnowledgePiece>,
    pub score: S,
}

/// Query text used to retrieve knowledge for one option: stem, a space, option text.
pub fn option_query(question: &ExamQuestion, label: OptionLabel) -> String {
    format!("{} {}", question.stem, question.option(label))
}

/// Top-1 knowledge piece for each option, in label order. A slot is empty
/// when the option shares no term with any piece.
pub fn retrieve_knowledge<'a, S: Scalar>(
    index: &'a DocumentIndex<KnowledgePiece, S>,
    question: &ExamQuestion,
) -> [KnowledgeSlot<'a, S>; 5] {
    let none = HashSet::new();
    OptionLabel::ALL.map(|label| {
        let mut hits = index.search(&option_query(question, label), 1, &none);
        match hits.pop() {
            Some((piece, hit)) => KnowledgeSlot { label, piece: Some(piece), score: hit.score },
            None => KnowledgeSlot { label, piece: None, score: S::zero() },
        }
    })
}

/// Up to `k` bank questions most similar to the stem plus all options,
/// never including the question itself. Most relevant first.
pub fn retrieve_examples<S: Scalar>(
    index: &DocumentIndex<ExamQuestion, S>,
    question: &ExamQuestion,
    k: usize,
) -> Vec<ExamQuestion> {
    let exclude = HashSet::from([question.id.clone()]);
    index.search(&question.full_text(), k, &exclude).into_iter().map(|(q, _)| q.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::HeuristicEstimator;

    type Index = RetrievalIndex<f64>;

    fn index_of(docs: &[(&str, &str)]) -> Index {
        Index::build(docs.iter().map(|(id, t)| (id.to_string(), *t)), Bm25Params::default()).unwrap()
    }

    #[test]
    fn single_doc_postings() {
        let index = index_of(&[("d", "a b a")]);
        assert_eq!(index.postings("a"), Some(&[Posting { doc: 0, tf: 2 }][..]));
        assert_eq!(index.postings("b"), Some(&[Posting { doc: 0, tf: 1 }][..]));
        assert_eq!(index.doc_length("d"), Some(3));
        assert_eq!(index.avg_doc_length(), 3.0);
    }

    #[test]
    fn identical_docs_share_average() {
        let index = index_of(&[("x", "肝 硬化"), ("y", "肝 硬化")]);
        assert_eq!(index.doc_length("x"), index.doc_length("y"));
        assert_eq!(index.avg_doc_length(), f64::from(index.doc_length("x").unwrap()));
    }

    #[test]
    fn build_errors() {
        let empty: Vec<(String, &str)> = vec![];
        assert!(matches!(Index::build(empty, Bm25Params::default()), Err(RetrievalError::EmptyCorpus)));
        let dup = vec![("a".to_string(), "x"), ("a".to_string(), "y")];
        match Index::build(dup, Bm25Params::default()) {
            Err(RetrievalError::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
        assert!(Bm25Params::new(0.0_f64, 0.5).is_err());
        assert!(Bm25Params::new(1.0_f64, 1.5).is_err());
    }

    #[test]
    fn single_doc_hand_computed_scores() {
        let index = index_of(&[("d", "a b a")]);
        // idf = ln(4/3); a: tf 2, b: tf 1, dl = avgdl = 3.
        let a = index.score(&tokenize("a"), "d").unwrap();
        assert!((a - 0.39556284962119864).abs() <= 1e-15);
        let ab = index.score(&tokenize("a b"), "d").unwrap();
        assert!((ab - 0.6832449220729795).abs() <= 1e-15);
    }

    #[test]
    fn no_shared_term_scores_zero() {
        let index = index_of(&[("d", "a b a"), ("e", "c")]);
        assert_eq!(index.score(&tokenize("zzz"), "d").unwrap(), 0.0);
        assert!(index.top_k("zzz", 3, &HashSet::new()).is_empty());
        assert!(matches!(index.score(&tokenize("a"), "nope"), Err(RetrievalError::UnknownDoc(_))));
    }

    #[test]
    fn top_k_returns_only_matching_docs() {
        let index = index_of(&[("1", "heart failure"), ("2", "renal colic"), ("3", "asthma")]);
        let hits = index.top_k("heart", 3, &HashSet::new());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "1");
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let index = index_of(&[("b", "fever"), ("a", "fever"), ("c", "fever")]);
        let ids: Vec<_> = index.top_k("fever", 3, &HashSet::new()).into_iter().map(|h| h.doc_id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn f32_index_agrees_on_ranking() {
        let docs = [("1", "chest pain radiating"), ("2", "chest x ray"), ("3", "pain relief")];
        let wide = index_of(&docs);
        let narrow =
            RetrievalIndex::<f32>::build(docs.iter().map(|(i, t)| (i.to_string(), *t)), Bm25Params::default()).unwrap();
        let none = HashSet::new();
        let wide_ids: Vec<_> = wide.top_k("chest pain", 3, &none).into_iter().map(|h| h.doc_id).collect();
        let narrow_ids: Vec<_> = narrow.top_k("chest pain", 3, &none).into_iter().map(|h| h.doc_id).collect();
        assert_eq!(wide_ids, narrow_ids);
    }

    fn piece(id: &str, text: &str) -> KnowledgePiece {
        KnowledgePiece::new(id, "test", text, &HeuristicEstimator).unwrap()
    }

    fn question(id: &str, stem: &str, options: [&str; 5]) -> ExamQuestion {
        ExamQuestion {
            id: id.into(),
            stem: stem.into(),
            options: options.map(String::from),
            answer: Some(OptionLabel::A),
            category: None,
        }
    }

    #[test]
    fn knowledge_slots_follow_options() {
        let index = DocumentIndex::<_, f64>::build(
            vec![piece("k1", "aspirin inhibits platelets"), piece("k2", "warfarin antagonizes vitamin k")],
            Bm25Params::default(),
        )
        .unwrap();
        let q = question("q", "which drug", ["aspirin", "zz", "warfarin", "yy", "xx"]);
        let slots = retrieve_knowledge(&index, &q);
        let ids: Vec<_> = slots.iter().map(|s| s.piece.map(|p| p.id.as_str())).collect();
        assert_eq!(ids, [Some("k1"), None, Some("k2"), None, None]);
        assert_eq!(slots.map(|s| s.label), OptionLabel::ALL);
    }

    #[test]
    fn examples_exclude_the_query_itself() {
        let bank = vec![
            question("q1", "fever cough", ["a", "b", "c", "d", "e"]),
            question("q2", "fever rash", ["a", "b", "c", "d", "e"]),
        ];
        let index = DocumentIndex::<_, f64>::build(bank.clone(), Bm25Params::default()).unwrap();
        let found = retrieve_examples(&index, &bank[0], 9);
        assert!(found.iter().all(|q| q.id != "q1"));
        assert!(found.len() <= 1);
    }

    #[test]
    fn index_file_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.idx");
        let index = DocumentIndex::<_, f64>::build(vec![piece("k1", "肝硬化 腹水")], Bm25Params::default()).unwrap();
        index.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("KFEIDX1\n"));
        let loaded = DocumentIndex::<KnowledgePiece, f64>::load(&path).unwrap();
        assert_eq!(loaded, index);
        assert!(matches!(
            DocumentIndex::<ExamQuestion, f64>::load(&path),
            Err(RetrievalError::Format { .. })
        ));
    }
}
