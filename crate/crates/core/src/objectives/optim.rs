//! Adam with global-norm clipping and step-decay learning-rate schedules.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `base * factor^(epoch / every)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let periods = epoch.checked_div(self.every).unwrap_or(0);
        self.base * self.factor.powi(periods as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN/Inf; parameters untouched.
    Skipped,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
    skipped: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(clip_norm: Option<f64>) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm, m: Vec::new(), v: Vec::new(), t: 0, skipped: 0 }
    }

    /// Number of updates skipped because of non-finite gradients.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected Adam update after clipping `grads` to the global norm.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], lr: f64) -> StepOutcome {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::warn!("skipping optimizer step: non-finite gradient");
            return StepOutcome::Skipped;
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = global_norm(grads);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t));
        let (lr, eps, scale) = (T::lit(lr), T::lit(self.eps), T::lit(scale));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * scale;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        StepOutcome::Applied
    }
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Plain gradient step `p -= lr * g`.
pub fn sgd_step<T: Scalar>(params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], lr: f64) {
    let lr = T::lit(lr);
    for (p, g) in params.into_iter().zip(grads) {
        for (x, &gi) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * gi;
        }
    }
}
