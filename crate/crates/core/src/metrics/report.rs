use serde::{Deserialize, Serialize};

use super::{bleu_all, build_df, cider_d, rouge_l, MetricError, CIDER_SIGMA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub n_images: usize,
}

/// Scores one candidate per image. CIDEr-D document frequencies come from the
/// evaluated references themselves.
pub fn evaluate(candidates: &[Vec<usize>], references: &[Vec<Vec<usize>>]) -> Result<EvaluationReport, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::Misaligned { candidates: candidates.len(), references: references.len() });
    }
    let stats = build_df(references)?;
    let b = bleu_all(candidates, references, 4)?;
    let n = candidates.len() as f64;
    let rouge = candidates.iter().zip(references).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / n;
    let cider = candidates.iter().zip(references).map(|(c, r)| cider_d(c, r, &stats, CIDER_SIGMA)).sum::<f64>() / n;
    Ok(EvaluationReport { bleu1: b[0], bleu4: b[3], rouge_l: rouge, cider_d: cider, n_images: candidates.len() })
}
