use std::cmp::Ordering;

use rand::Rng;

use super::step::{DecoderState, Session};
use crate::scalar::Scalar;
use crate::tensor::TensorError;
use crate::vocab::{BOS, EOS};

pub const DEFAULT_BEAM: usize = 2;

/// One step's output distribution and the quantities traced for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDist {
    pub probs: Vec<f64>,
    /// Switch value `s`; zero when the copy branch is off.
    pub switch: f64,
    /// Recalled-word attention `α^r`; empty without recalled words.
    pub copy: Vec<f64>,
}

/// An autoregressive next-token model.
pub trait Stepper {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn start(&mut self) -> Result<Self::State, TensorError>;

    /// Distribution over the token following `prev`, and the advanced state.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, StepDist), TensorError>;
}

impl<T: Scalar> Stepper for Session<'_, T> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        Session::vocab_size(self)
    }

    fn start(&mut self) -> Result<DecoderState, TensorError> {
        Ok(Session::start(self))
    }

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<(DecoderState, StepDist), TensorError> {
        let out = Session::step(self, state, prev)?;
        let tape = &*self.tape;
        let dist = StepDist {
            probs: tape.value(out.p).to_f64_vec(),
            switch: out.s.map_or(0.0, |s| tape.item(s).as_f64()),
            copy: out.alpha_r.map_or_else(Vec::new, |a| tape.value(a).to_f64_vec()),
        };
        Ok((out.state, dist))
    }
}

/// A decoded caption with per-step traces. `tokens` ends in `EOS` unless the
/// length limit was reached first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub step_logprobs: Vec<f64>,
    pub switch_trace: Vec<f64>,
    pub copy_trace: Vec<Vec<f64>>,
}

impl Decoded {
    fn push(&mut self, token: usize, dist: &StepDist) {
        let lp = dist.probs[token].ln();
        self.tokens.push(token);
        self.logprob += lp;
        self.step_logprobs.push(lp);
        self.switch_trace.push(dist.switch);
        self.copy_trace.push(dist.copy.clone());
    }

    fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    fn last(&self) -> usize {
        self.tokens.last().copied().unwrap_or(BOS)
    }
}

/// Higher log-probability first, then the lexicographically smaller token sequence.
fn rank(a: &Decoded, b: &Decoded) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Index of the largest probability; ties go to the lowest id.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Draws an index with probability proportional to `probs`.
pub fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        if u < p {
            return i;
        }
        u -= p;
        last = i;
    }
    last
}

fn run<S: Stepper>(
    model: &mut S,
    max_len: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<Decoded, TensorError> {
    if max_len == 0 {
        return Err(TensorError::Usage("max_len must be at least 1".into()));
    }
    let mut state = model.start()?;
    let mut out = Decoded::default();
    while out.tokens.len() < max_len && !out.finished() {
        let (next, dist) = model.step(&state, out.last())?;
        let w = choose(&dist.probs);
        out.push(w, &dist);
        state = next;
    }
    Ok(out)
}

/// Picks the most probable token at every step.
pub fn greedy<S: Stepper>(model: &mut S, max_len: usize) -> Result<Decoded, TensorError> {
    run(model, max_len, argmax)
}

/// Draws every token from the step distribution.
pub fn sample<S: Stepper, R: Rng + ?Sized>(model: &mut S, max_len: usize, rng: &mut R) -> Result<Decoded, TensorError> {
    run(model, max_len, |p| draw(p, rng))
}

/// Log-probability and traces of a given token sequence under teacher forcing.
pub fn score<S: Stepper>(model: &mut S, tokens: &[usize]) -> Result<Decoded, TensorError> {
    let mut it = tokens.iter();
    run(model, tokens.len().max(1), |_| *it.next().expect("one token per step"))
}

struct Hyp<S> {
    decoded: Decoded,
    state: S,
}

/// Beam search over total log-probability without length normalization.
///
/// Finished hypotheses end in `EOS` or reach `max_len`. The greedy caption is
/// always a candidate, so the result is never less probable than greedy decoding.
pub fn beam_search<S: Stepper>(model: &mut S, beam: usize, max_len: usize) -> Result<Decoded, TensorError> {
    if beam == 0 {
        return Err(TensorError::Usage("beam size must be at least 1".into()));
    }
    let mut finished = vec![greedy(model, max_len)?];
    let mut live = vec![Hyp { decoded: Decoded::default(), state: model.start()? }];
    for t in 0..max_len {
        let mut cands: Vec<Hyp<S::State>> = Vec::new();
        for h in &live {
            let (next, dist) = model.step(&h.state, h.decoded.last())?;
            for (w, &p) in dist.probs.iter().enumerate() {
                if p > 0.0 {
                    let mut d = h.decoded.clone();
                    d.push(w, &dist);
                    cands.push(Hyp { decoded: d, state: next.clone() });
                }
            }
        }
        cands.sort_by(|a, b| rank(&a.decoded, &b.decoded));
        cands.truncate(beam);
        live.clear();
        for c in cands {
            if c.decoded.finished() || t + 1 == max_len {
                finished.push(c.decoded);
            } else {
                live.push(c);
            }
        }
        let best_done = finished.iter().map(|d| d.logprob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|h| h.decoded.logprob).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || best_done > best_live {
            break;
        }
    }
    finished.sort_by(rank);
    Ok(finished.swap_remove(0))
}

/// A stepper whose next-token distribution is an explicit function of the prefix.
pub struct FnStepper<F> {
    vocab_size: usize,
    dist: F,
}

impl<F: FnMut(&[usize]) -> Vec<f64>> FnStepper<F> {
    pub fn new(vocab_size: usize, dist: F) -> Self {
        FnStepper { vocab_size, dist }
    }
}

impl<F: FnMut(&[usize]) -> Vec<f64>> Stepper for FnStepper<F> {
    /// Tokens emitted so far; `None` before the first step.
    type State = Option<Vec<usize>>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start(&mut self) -> Result<Self::State, TensorError> {
        Ok(None)
    }

    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, StepDist), TensorError> {
        let prefix = match state {
            None => Vec::new(),
            Some(p) => {
                let mut p = p.clone();
                p.push(prev);
                p
            }
        };
        let probs = (self.dist)(&prefix);
        if probs.len() != self.vocab_size {
            return Err(TensorError::Shape {
                op: "step",
                detail: format!("{} probabilities for {} words", probs.len(), self.vocab_size),
            });
        }
        Ok((Some(prefix), StepDist { probs, switch: 0.0, copy: Vec::new() }))
    }
}
