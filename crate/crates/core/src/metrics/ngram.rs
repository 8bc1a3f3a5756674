use std::collections::{HashMap, HashSet};

use super::MetricError;

pub const MAX_N: usize = 4;

/// Counts of the `n`-grams of `tokens`.
pub fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// `n`-grams of `tokens` with their counts, in order of first occurrence.
pub fn ordered_ngram_counts(tokens: &[usize], n: usize) -> Vec<(&[usize], usize)> {
    let mut slot: HashMap<&[usize], usize> = HashMap::new();
    let mut out: Vec<(&[usize], usize)> = Vec::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for g in tokens.windows(n) {
        match slot.get(g) {
            Some(&i) => out[i].1 += 1,
            None => {
                slot.insert(g, out.len());
                out.push((g, 1));
            }
        }
    }
    out
}

/// Document frequencies of 1..=4-grams over reference sets, one set per image.
#[derive(Clone, Debug, PartialEq)]
pub struct NgramStats {
    df: HashMap<Vec<usize>, usize>,
    num_images: usize,
}

impl NgramStats {
    /// Number of images whose references contain `gram`.
    pub fn df(&self, gram: &[usize]) -> usize {
        self.df.get(gram).copied().unwrap_or(0)
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    /// `ln(number of images)`
    pub fn log_ref_len(&self) -> f64 {
        (self.num_images as f64).ln()
    }

    pub fn len(&self) -> usize {
        self.df.len()
    }

    pub fn is_empty(&self) -> bool {
        self.df.is_empty()
    }
}

/// Per-image document frequencies: an n-gram counts once per image no matter how
/// many of that image's references contain it.
pub fn build_df(references: &[Vec<Vec<usize>>]) -> Result<NgramStats, MetricError> {
    if references.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut df: HashMap<Vec<usize>, usize> = HashMap::new();
    for refs in references {
        let mut seen: HashSet<&[usize]> = HashSet::new();
        for r in refs {
            for n in 1..=MAX_N {
                if r.len() >= n {
                    seen.extend(r.windows(n));
                }
            }
        }
        for g in seen {
            *df.entry(g.to_vec()).or_insert(0) += 1;
        }
    }
    Ok(NgramStats { df, num_images: references.len() })
}
