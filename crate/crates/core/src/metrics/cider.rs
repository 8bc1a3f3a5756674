use std::collections::HashMap;

use super::ngram::{ordered_ngram_counts, NgramStats, MAX_N};

/// Gaussian length-penalty width.
pub const CIDER_SIGMA: f64 = 6.0;

// Weights are kept in first-occurrence order so sums are reproducible.
struct TfIdf<'a> {
    weights: [Vec<(&'a [usize], f64)>; MAX_N],
    lookup: [HashMap<&'a [usize], f64>; MAX_N],
    norms: [f64; MAX_N],
    length: f64,
}

fn tfidf<'a>(tokens: &'a [usize], stats: &NgramStats) -> TfIdf<'a> {
    let log_n = stats.log_ref_len();
    let mut weights: [Vec<(&[usize], f64)>; MAX_N] = Default::default();
    let mut lookup: [HashMap<&[usize], f64>; MAX_N] = Default::default();
    let mut norms = [0.0; MAX_N];
    for n in 1..=MAX_N {
        for (g, tf) in ordered_ngram_counts(tokens, n) {
            let idf = log_n - (stats.df(g).max(1) as f64).ln();
            let w = tf as f64 * idf;
            norms[n - 1] += w * w;
            weights[n - 1].push((g, w));
            lookup[n - 1].insert(g, w);
        }
    }
    TfIdf { weights, lookup, norms: norms.map(f64::sqrt), length: tokens.len() as f64 }
}

/// CIDEr-D of one candidate against its references.
///
/// Per n-gram order: clipped TF-IDF cosine with a Gaussian length penalty,
/// averaged over references; then averaged over orders 1..=4 and scaled by 10.
pub fn cider_d(candidate: &[usize], references: &[Vec<usize>], stats: &NgramStats, sigma: f64) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let hyp = tfidf(candidate, stats);
    let mut per_order = [0.0; MAX_N];
    for r in references {
        let reference = tfidf(r, stats);
        let delta = hyp.length - reference.length;
        let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
        for n in 0..MAX_N {
            let mut val = 0.0;
            for &(g, wh) in &hyp.weights[n] {
                if let Some(&wr) = reference.lookup[n].get(g) {
                    val += wh.min(wr) * wr;
                }
            }
            if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
                val /= hyp.norms[n] * reference.norms[n];
            }
            per_order[n] += val * penalty;
        }
    }
    let refs = references.len() as f64;
    per_order.iter().map(|v| v / refs).sum::<f64>() / MAX_N as f64 * 10.0
}
