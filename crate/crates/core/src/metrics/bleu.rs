use std::collections::HashMap;

use super::ngram::{ngram_counts, MAX_N};
use super::MetricError;

/// Corpus BLEU-1..=`max_n` (cumulative), without smoothing.
///
/// The brevity penalty uses, per sentence, the reference length closest to the
/// candidate length (the shorter one on ties).
pub fn bleu_all(
    candidates: &[Vec<usize>],
    references: &[Vec<Vec<usize>>],
    max_n: usize,
) -> Result<Vec<f64>, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::Misaligned { candidates: candidates.len(), references: references.len() });
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, refs) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += refs.iter().map(Vec::len).min_by_key(|&l| (l.abs_diff(c.len()), l)).unwrap_or(0);
        for n in 1..=max_n {
            let mut max_ref: HashMap<&[usize], usize> = HashMap::new();
            for r in refs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in ngram_counts(c, n) {
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(vec![0.0; max_n]);
    }
    let bp = if cand_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    let mut scores = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut dead = false;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            dead = true;
        } else {
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
        }
        scores.push(if dead { 0.0 } else { bp * (log_sum / (n + 1) as f64).exp() });
    }
    Ok(scores)
}

/// Corpus BLEU-`n`.
pub fn bleu(candidates: &[Vec<usize>], references: &[Vec<Vec<usize>>], n: usize) -> Result<f64, MetricError> {
    assert!((1..=MAX_N).contains(&n), "BLEU order must be 1..=4");
    Ok(bleu_all(candidates, references, n)?[n - 1])
}
