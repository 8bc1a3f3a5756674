use rand::Rng;

use crate::decoder::{draw, greedy, Decoded, Session};
use crate::metrics::{cider_d, NgramStats, CIDER_SIGMA};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorError, Var};
use crate::vocab::{strip_eos, BOS, EOS};

use super::xe::PROB_FLOOR;

/// CIDEr-D rewards of the four captions drawn for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBundle {
    /// Sample from the full model, `w^s`.
    pub r_s: f64,
    /// Greedy caption of the full model, `w^g`.
    pub r_g: f64,
    /// Sample with the switch off, `w^ŝ`.
    pub r_s_off: f64,
    /// Greedy caption with the switch off, `w^ĝ`.
    pub r_g_off: f64,
    /// Recalled-word reward `r_s − r_ŝ`.
    pub wr: f64,
}

impl RewardBundle {
    pub fn new(r_s: f64, r_g: f64, r_s_off: f64, r_g_off: f64) -> Self {
        RewardBundle { r_s, r_g, r_s_off, r_g_off, wr: recalled_word_reward(r_s, r_s_off) }
    }
}

/// `r(W_r) = r_s − r_ŝ`: the reward attributable to the copy branch.
pub fn recalled_word_reward(r_s: f64, r_s_off: f64) -> f64 {
    r_s - r_s_off
}

/// `−(r_s − r_g) · Σ_t log p(w^s_t)` with the advantage held constant.
pub fn scst_loss<T: Scalar>(tape: &mut Tape<T>, logprob_sum: Var, r_s: f64, r_g: f64) -> Result<Var, TensorError> {
    tape.scale(logprob_sum, T::lit(-(r_s - r_g)))
}

/// `−λ (r_ŝ − r_ĝ) Σ log p^v(w^ŝ) − (1 − λ) r(W_r) Σ log p(w^s)`.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logprob_off: Var,
    logprob_full: Var,
    rewards: &RewardBundle,
    lambda: f64,
) -> Result<Var, TensorError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TensorError::Usage(format!("lambda {} outside [0, 1]", lambda)));
    }
    let a = tape.scale(logprob_off, T::lit(-lambda * (rewards.r_s_off - rewards.r_g_off)))?;
    let b = tape.scale(logprob_full, T::lit(-(1.0 - lambda) * rewards.wr))?;
    tape.add(a, b)
}

/// Samples a caption on the session's tape and returns it with `Σ_t log p(w_t)` as a var.
pub fn sample_with_logprob<T: Scalar, R: Rng + ?Sized>(
    session: &mut Session<'_, T>,
    max_len: usize,
    rng: &mut R,
) -> Result<(Decoded, Var), TensorError> {
    if max_len == 0 {
        return Err(TensorError::Usage("max_len must be at least 1".into()));
    }
    let mut state = session.start();
    let mut prev = BOS;
    let mut terms = Vec::new();
    let mut decoded = Decoded::default();
    while decoded.tokens.len() < max_len && prev != EOS {
        let out = session.step(&state, prev)?;
        let tape = &mut *session.tape;
        let w = draw(&tape.value(out.p).to_f64_vec(), rng);
        let p = tape.pick(out.p, w)?;
        let lp = tape.ln(p, T::lit(PROB_FLOOR))?;
        terms.push(lp);
        let lpv = tape.item(lp).as_f64();
        decoded.tokens.push(w);
        decoded.logprob += lpv;
        decoded.step_logprobs.push(lpv);
        decoded.switch_trace.push(out.s.map_or(0.0, |s| tape.item(s).as_f64()));
        decoded.copy_trace.push(out.alpha_r.map_or_else(Vec::new, |a| tape.value(a).to_f64_vec()));
        state = out.state;
        prev = w;
    }
    let sum = session.tape.add_n(&terms)?;
    Ok((decoded, sum))
}

/// CIDEr-D of a decoded caption against the image's references.
pub fn reward(decoded: &Decoded, references: &[Vec<usize>], stats: &NgramStats) -> f64 {
    cider_d(strip_eos(&decoded.tokens), references, stats, CIDER_SIGMA)
}

/// The loss of one combined policy-gradient step and the rewards behind it.
pub struct RlSample {
    pub loss: Var,
    pub rewards: RewardBundle,
    pub sampled: Decoded,
    pub sampled_off: Decoded,
}

/// Draws `w^ŝ` (switch off) from `rng_off` and `w^s` (full model) from `rng_full`,
/// decodes both greedy baselines and forms the combined λ loss on the session's tape.
pub fn combined_rl_step<T: Scalar, R: Rng + ?Sized>(
    session: &mut Session<'_, T>,
    references: &[Vec<usize>],
    stats: &NgramStats,
    lambda: f64,
    max_len: usize,
    rng_full: &mut R,
    rng_off: &mut R,
) -> Result<RlSample, TensorError> {
    let restore = session.switch_off;
    session.switch_off = true;
    let (sampled_off, lp_off) = sample_with_logprob(session, max_len, rng_off)?;
    let greedy_off = greedy(session, max_len)?;
    session.switch_off = false;
    let (sampled, lp_full) = sample_with_logprob(session, max_len, rng_full)?;
    let greedy_full = greedy(session, max_len)?;
    session.switch_off = restore;
    let rewards = RewardBundle::new(
        reward(&sampled, references, stats),
        reward(&greedy_full, references, stats),
        reward(&sampled_off, references, stats),
        reward(&greedy_off, references, stats),
    );
    let loss = combined_loss(session.tape, lp_off, lp_full, &rewards, lambda)?;
    Ok(RlSample { loss, rewards, sampled, sampled_off })
}
