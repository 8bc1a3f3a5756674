//! Straight-line reference formulas for the metrics and the triplet loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grams(s: &[usize], n: usize) -> Vec<Vec<usize>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

/// CIDEr-D with n-gram vectors built by linear scans; `corpus` holds every image's references.
pub fn cider_d(cand: &[usize], refs: &[Vec<usize>], corpus: &[Vec<Vec<usize>>]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let doc_freq =
        |g: &[usize]| corpus.iter().filter(|img| img.iter().any(|r| grams(r, g.len()).iter().any(|x| x == g))).count();
    let log_n = (corpus.len() as f64).ln();
    let vector = |s: &[usize], n: usize| -> Vec<(Vec<usize>, f64)> {
        let all = grams(s, n);
        let mut distinct: Vec<Vec<usize>> = Vec::new();
        for g in &all {
            if !distinct.contains(g) {
                distinct.push(g.clone());
            }
        }
        distinct
            .into_iter()
            .map(|g| {
                let tf = all.iter().filter(|x| **x == g).count() as f64;
                let idf = log_n - (doc_freq(&g).max(1) as f64).ln();
                (g, tf * idf)
            })
            .collect()
    };
    let mut total = 0.0;
    for n in 1..=4 {
        let h = vector(cand, n);
        let hn = h.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        let mut acc = 0.0;
        for r in refs {
            let rv = vector(r, n);
            let rn = rv.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            let mut num = 0.0;
            for (g, wh) in &h {
                for (g2, wr) in &rv {
                    if g == g2 {
                        num += wh.min(*wr) * wr;
                    }
                }
            }
            let mut sim = if hn != 0.0 && rn != 0.0 { num / (hn * rn) } else { num };
            let d = cand.len() as f64 - r.len() as f64;
            sim *= (-(d * d) / 72.0).exp();
            acc += sim;
        }
        total += acc / refs.len() as f64;
    }
    total / 4.0 * 10.0
}

/// Corpus BLEU-N with clipped counts and the closest-reference brevity penalty.
pub fn bleu(cands: &[Vec<usize>], refs: &[Vec<Vec<usize>>], max_n: usize) -> f64 {
    let mut log_p = 0.0;
    for n in 1..=max_n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (c, rs) in cands.iter().zip(refs) {
            let cg = grams(c, n);
            tot += cg.len();
            let mut done: Vec<&Vec<usize>> = Vec::new();
            for g in &cg {
                if done.contains(&g) {
                    continue;
                }
                done.push(g);
                let in_c = cg.iter().filter(|x| *x == g).count();
                let best_ref = rs.iter().map(|r| grams(r, n).iter().filter(|x| *x == g).count()).max().unwrap_or(0);
                hit += in_c.min(best_ref);
            }
        }
        if hit == 0 {
            return 0.0;
        }
        log_p += (hit as f64 / tot as f64).ln();
    }
    let c_len: usize = cands.iter().map(Vec::len).sum();
    let mut r_len = 0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut best = rs[0].len();
        for r in rs {
            let (d, bd) = ((r.len() as i64 - c.len() as i64).abs(), (best as i64 - c.len() as i64).abs());
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        r_len += best;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    bp * (log_p / max_n as f64).exp()
}

/// Longest common subsequence by enumerating every subsequence of the shorter sentence.
pub fn lcs(a: &[usize], b: &[usize]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |s: &[usize]| {
        let mut it = long.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<usize> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| short[i]).collect();
        if sub.len() > best && is_subseq(&sub) {
            best = sub.len();
        }
    }
    best
}

/// ROUGE-L F-score with β = 1.2, best over references.
pub fn rouge_l(c: &[usize], refs: &[Vec<usize>]) -> f64 {
    let mut best = 0.0f64;
    for r in refs {
        let l = lcs(c, r) as f64;
        if l == 0.0 {
            continue;
        }
        let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
        best = best.max((1.0 + 1.44) * p * rec / (rec + 1.44 * p));
    }
    best
}

/// Hard-negative triplet loss by a double loop over a row-major `b x b` score matrix.
pub fn triplet(s: &[f64], b: usize, margin: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..b {
        let pos = s[i * b + i];
        let mut caption_hinge: f64 = 0.0;
        let mut image_hinge: f64 = 0.0;
        for j in 0..b {
            if j != i {
                caption_hinge = caption_hinge.max(((margin + s[i * b + j]) - pos).max(0.0));
                image_hinge = image_hinge.max(((margin + s[j * b + i]) - pos).max(0.0));
            }
        }
        total += caption_hinge;
        total += image_hinge;
    }
    total
}

pub fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize, len: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    let n = rng.random_range(len);
    (0..n).map(|_| 4 + rng.random_range(0..vocab)).collect()
}

/// A few images with 1-3 references each and one candidate per image.
pub fn random_instance(seed: u64) -> (Vec<Vec<usize>>, Vec<Vec<Vec<usize>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = rng.random_range(2..6);
    let refs: Vec<Vec<Vec<usize>>> = (0..images)
        .map(|_| (0..rng.random_range(1..4)).map(|_| random_sentence(&mut rng, 5, 1..=6)).collect())
        .collect();
    let cands = (0..images).map(|_| random_sentence(&mut rng, 5, 1..=6)).collect();
    (cands, refs)
}
