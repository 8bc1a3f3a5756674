//! Layer building blocks recorded on a tape.

use rand::Rng;

use super::{Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// One LSTM step. `weight` is `[4H, in + H]` acting on `[x, h]`, `bias` is `[4H]`,
/// gate order input, forget, candidate, output.
pub fn lstm_cell<T: Scalar>(
    tape: &mut Tape<T>,
    weight: Var,
    bias: Var,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), TensorError> {
    let hidden = tape.shape(h)[0];
    let input = tape.concat(&[x, h])?;
    let z = tape.matmul(weight, input)?;
    let gates = tape.add(z, bias)?;
    let i = tape.slice(gates, 0, hidden)?;
    let f = tape.slice(gates, hidden, hidden)?;
    let g = tape.slice(gates, 2 * hidden, hidden)?;
    let o = tape.slice(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Glorot-style uniform init for a `[rows, cols]` weight.
pub fn glorot<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], scale, rng)
}

/// LSTM bias with the forget-gate block set to one.
pub fn lstm_bias<T: Scalar>(hidden: usize) -> Tensor<T> {
    let mut b = Tensor::zeros(&[4 * hidden]);
    for v in &mut b.data_mut()[hidden..2 * hidden] {
        *v = T::one();
    }
    b
}

/// Weighted combination `Σ_i w_i · rows_i` of the rows of a matrix.
pub fn weighted_rows<T: Scalar>(tape: &mut Tape<T>, weights: Var, rows: Var) -> Result<Var, TensorError> {
    tape.matmul(weights, rows)
}

/// Additive attention scores `w · tanh(keys + query)` where `keys` is `[n, A]`
/// and `query` is `[A]`, followed by a softmax over the `n` rows.
pub fn additive_attention<T: Scalar>(tape: &mut Tape<T>, keys: Var, query: Var, w: Var) -> Result<Var, TensorError> {
    let pre = tape.add_bias(keys, query)?;
    let act = tape.tanh(pre)?;
    let scores = tape.matmul(act, w)?;
    tape.softmax(scores)
}
