use crate::decoder::Session;
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorError, Var};
use crate::vocab::{BOS, PAD};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct CrossEntropy {
    /// `−Σ_t log P_t(w*_t)` over non-`PAD` targets.
    pub loss: Var,
    /// Number of targets counted.
    pub tokens: usize,
    /// Some target probability fell below [`PROB_FLOOR`].
    pub clamped: bool,
}

/// Cross-entropy of per-step distributions against target tokens.
pub fn cross_entropy_loss<T: Scalar>(
    tape: &mut Tape<T>,
    dists: &[Var],
    targets: &[usize],
) -> Result<CrossEntropy, TensorError> {
    if dists.len() != targets.len() {
        return Err(TensorError::Usage(format!("{} distributions for {} targets", dists.len(), targets.len())));
    }
    let mut terms = Vec::with_capacity(targets.len());
    let mut clamped = false;
    for (&d, &w) in dists.iter().zip(targets) {
        if w == PAD {
            continue;
        }
        let p = tape.pick(d, w)?;
        clamped |= tape.item(p).as_f64() < PROB_FLOOR;
        terms.push(tape.ln(p, T::lit(PROB_FLOOR))?);
    }
    if terms.is_empty() {
        return Err(TensorError::Usage("cross-entropy needs at least one non-padding target".into()));
    }
    if clamped {
        log::warn!("target probability below {} clamped in cross-entropy", PROB_FLOOR);
    }
    let total = tape.add_n(&terms)?;
    let loss = tape.neg(total)?;
    Ok(CrossEntropy { loss, tokens: terms.len(), clamped })
}

/// Teacher-forced cross-entropy of one caption (ending in `EOS`).
pub fn caption_cross_entropy<T: Scalar>(
    session: &mut Session<'_, T>,
    caption: &[usize],
) -> Result<CrossEntropy, TensorError> {
    let mut state = session.start();
    let mut prev = BOS;
    let mut dists = Vec::with_capacity(caption.len());
    for &w in caption {
        let out = session.step(&state, prev)?;
        dists.push(out.p);
        state = out.state;
        prev = w;
    }
    cross_entropy_loss(session.tape, &dists, caption)
}
