use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Hard-negative triplet loss over a `[B, B]` score matrix whose diagonal holds the
/// matched pairs (rows are images, columns captions), summed over the batch:
///
/// `Σ_i [α + max_{j≠i} S_ij − S_ii]_+ + [α + max_{j≠i} S_ji − S_ii]_+`
pub fn triplet_loss<T: Scalar>(tape: &mut Tape<T>, scores: Var, margin: f64) -> Result<Var, TensorError> {
    let b = match tape.shape(scores) {
        [r, c] if r == c => *r,
        other => return Err(TensorError::Shape { op: "triplet_loss", detail: format!("{:?} is not square", other) }),
    };
    if b < 2 {
        return Err(TensorError::Usage("triplet loss needs a batch of at least two pairs".into()));
    }
    let alpha = T::lit(margin);
    let mut terms = Vec::with_capacity(2 * b);
    for i in 0..b {
        let pos = tape.pick(scores, i * b + i)?;
        let row: Vec<usize> = (0..b).filter(|&j| j != i).map(|j| i * b + j).collect();
        let col: Vec<usize> = (0..b).filter(|&j| j != i).map(|j| j * b + i).collect();
        for idx in [row, col] {
            let negs = tape.gather(scores, &idx)?;
            let hardest = tape.max(negs)?;
            let shifted = tape.affine(hardest, T::one(), alpha)?;
            let gap = tape.sub(shifted, pos)?;
            terms.push(tape.relu(gap)?);
        }
    }
    tape.add_n(&terms)
}

/// [`triplet_loss`] evaluated on a plain score matrix.
pub fn triplet_loss_value<T: Scalar>(scores: &Tensor<T>, margin: f64) -> Result<T, TensorError> {
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let loss = triplet_loss(&mut tape, s, margin)?;
    Ok(tape.item(loss))
}
