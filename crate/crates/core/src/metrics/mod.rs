//! Reference-based caption metrics over token-id sequences.
//!
//! Candidates and references are passed without `EOS`.

mod bleu;
mod cider;
mod ngram;
mod report;
mod rouge;

pub use bleu::{bleu, bleu_all};
pub use cider::{cider_d, CIDER_SIGMA};
pub use ngram::{build_df, ngram_counts, ordered_ngram_counts, NgramStats, MAX_N};
pub use report::{evaluate, EvaluationReport};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("reference corpus is empty")]
    EmptyCorpus,
    #[error("{candidates} candidates but {references} reference sets")]
    Misaligned { candidates: usize, references: usize },
}
