//! Hypothesis search and scoring.

pub mod ctc;
pub mod encdec;
pub mod ngram;
pub mod wer;

pub use ctc::{collapse, ctc_beam_search, ctc_greedy};
pub use encdec::{encdec_beam_search, encdec_greedy};
pub use ngram::{train_ngram, NGramLM};
pub use wer::{edit_counts, word_error_rate, EditCounts, WerAccumulator};

use std::cmp::Ordering;

/// A decoded hypothesis. `score` is a log-probability, LM-fused where an
/// LM was used.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub score: f64,
    pub per_token_scores: Option<Vec<f64>>,
}

/// Higher score first; equal scores fall back to the lexicographically
/// smaller token sequence.
pub(crate) fn rank(a_score: f64, a_tokens: &[u32], b_score: f64, b_tokens: &[u32]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}
