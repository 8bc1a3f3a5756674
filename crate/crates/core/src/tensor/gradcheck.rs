use super::{Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// The coordinate with the largest relative error in a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Input position and flat index of the worst coordinate.
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` records its computation on the given tape from the supplied input vars
/// (in the order of `point`) and returns the scalar output. Every coordinate of
/// every input is perturbed by `±h`. Returns the largest relative error.
pub fn grad_check<T, F>(f: F, point: &[Tensor<T>], h: f64) -> Result<f64, TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError>,
{
    grad_check_report(f, point, h).map(|r| r.max_relative_error)
}

/// [`grad_check`] with the location and values of the worst coordinate.
pub fn grad_check_report<T, F>(f: F, point: &[Tensor<T>], h: f64) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.item(out).as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = GradCheckReport { max_relative_error: 0.0, input: 0, index: 0, analytic: 0.0, numeric: 0.0 };
    let mut probe: Vec<Tensor<T>> = point.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, v);
        for j in 0..point[k].len() {
            let base = point[k].data()[j];
            probe[k].data_mut()[j] = base + T::lit(h);
            let up = eval(&probe)?;
            probe[k].data_mut()[j] = base - T::lit(h);
            let down = eval(&probe)?;
            probe[k].data_mut()[j] = base;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j].as_f64();
            let err = relative_error(a, numeric);
            if err > worst.max_relative_error {
                worst = GradCheckReport { max_relative_error: err, input: k, index: j, analytic: a, numeric };
            }
        }
    }
    Ok(worst)
}
