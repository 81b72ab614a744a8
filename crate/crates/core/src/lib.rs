//! Knowledge- and few-shot-enhanced in-context learning for five-option
//! multiple-choice exams: BM25 retrieval of background knowledge and solved
//! examples, demonstration enrichment, budgeted prompt assembly, model calls
//! with record/replay, and category-split grading.
//!
//! Retrieval is generic over the score type; the aliases below fix it to `f64`.

pub mod corpus;
pub mod eval;
pub mod fewshot;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod scalar;
pub mod tokenizer;

pub use scalar::Scalar;

pub type Bm25Index = retrieval::RetrievalIndex<f64>;
pub type Bm25IndexF32 = retrieval::RetrievalIndex<f32>;
pub type KnowledgeIndex = retrieval::DocumentIndex<corpus::KnowledgePiece, f64>;
pub type BankIndex = retrieval::DocumentIndex<corpus::ExamQuestion, f64>;
pub type ScoredHit = retrieval::ScoredHit<f64>;
