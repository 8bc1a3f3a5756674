//! Named parameter collections shared by the trainable models.

use crate::scalar::Scalar;
use crate::tensor::{Checkpoint, CheckpointError, Gradients, Tape, Tensor, Var};

/// A model whose learnable tensors can be enumerated in a fixed order.
pub trait ParamSet<T: Scalar> {
    /// Names and tensors, in the order used by [`bind`], gradients and checkpoints.
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Records every parameter on `tape`, as trainable leaves or as constants.
pub fn bind<T: Scalar, P: ParamSet<T> + ?Sized>(model: &P, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
    model
        .params()
        .into_iter()
        .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect()
}

/// Gradients for the bound parameter vars, zero where the loss did not reach.
pub fn collect_grads<T: Scalar>(tape: &Tape<T>, grads: &Gradients<T>, vars: &[Var]) -> Vec<Tensor<T>> {
    vars.iter().map(|&v| grads.wrt(tape, v)).collect()
}

/// Adds `src` into `acc` elementwise.
pub fn accumulate<T: Scalar>(acc: &mut [Tensor<T>], src: &[Tensor<T>]) {
    for (a, s) in acc.iter_mut().zip(src) {
        for (x, &y) in a.data_mut().iter_mut().zip(s.data()) {
            *x += y;
        }
    }
}

pub fn save_params<T: Scalar, P: ParamSet<T> + ?Sized>(model: &P, prefix: &str, ckpt: &mut Checkpoint) {
    for (name, t) in model.params() {
        ckpt.push(format!("{}.{}", prefix, name), t);
    }
}

/// Overwrites every parameter from `ckpt`, requiring identical shapes.
pub fn load_params<T: Scalar, P: ParamSet<T> + ?Sized>(
    model: &mut P,
    prefix: &str,
    ckpt: &Checkpoint,
) -> Result<(), CheckpointError> {
    let names: Vec<(String, Vec<usize>)> =
        model.params().iter().map(|(n, t)| (format!("{}.{}", prefix, n), t.shape().to_vec())).collect();
    let loaded = names.iter().map(|(n, s)| ckpt.load::<T>(n, Some(s))).collect::<Result<Vec<_>, _>>()?;
    for (dst, src) in model.params_mut().into_iter().zip(loaded) {
        *dst = src;
    }
    Ok(())
}
