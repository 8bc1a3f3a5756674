use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{DecoderParams, DecoderVars};
use crate::data::ImageRecord;
use crate::retrieval::RecalledWordSet;
use crate::scalar::Scalar;
use crate::tensor::nn::{additive_attention, lstm_cell};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::vocab::{BOS, PAD};

/// Hidden and cell vectors of both LSTMs.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

impl DecoderState {
    /// All-zero state; decoding starts from `BOS`.
    pub fn initial<T: Scalar>(tape: &mut Tape<T>, hidden: usize) -> Self {
        let z = tape.constant(Tensor::zeros(&[hidden]));
        DecoderState { h1: z, c1: z, h2: z, c2: z }
    }
}

/// Per-image quantities that stay fixed while a caption is decoded.
#[derive(Clone, Debug)]
pub struct ImageContext {
    pub regions: Var,
    pub global: Var,
    /// `V W_v¹ᵀ`, `[k, A]`.
    pub region_keys: Var,
    pub recall: Option<RecallContext>,
}

#[derive(Clone, Debug)]
pub struct RecallContext {
    pub words: Vec<usize>,
    /// Decoder embeddings `X_r` of the recalled words, `[m, E]`.
    pub embeds: Var,
    /// `X_r W_rᵀ`, `[m, A]`.
    pub keys: Var,
    /// `W_v² v̄`.
    pub image_term: Var,
}

pub fn prepare_image<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &DecoderVars,
    image: &ImageRecord,
    recalled: &RecalledWordSet,
) -> Result<ImageContext, TensorError> {
    let regions = tape.constant(image.regions_tensor());
    let global = tape.constant(image.global_tensor());
    let wt = tape.transpose(vars.att_v)?;
    let region_keys = tape.matmul(regions, wt)?;
    let recall = if recalled.is_empty() {
        None
    } else {
        let words = recalled.words().to_vec();
        let embeds = tape.embedding(vars.embed, &words)?;
        let rt = tape.transpose(vars.rec_r)?;
        let keys = tape.matmul(embeds, rt)?;
        let image_term = tape.matmul(vars.rec_v, global)?;
        Some(RecallContext { words, embeds, keys, image_term })
    };
    Ok(ImageContext { regions, global, region_keys, recall })
}

/// Output of the Up-Down core for one step.
#[derive(Clone, Copy, Debug)]
pub struct BaseStep {
    pub state: DecoderState,
    pub alpha_v: Var,
    pub att: Var,
}

/// LSTM1 on `[X_{t-1}, v̄, h²_{t-1}]`, region attention from `h¹`, then LSTM2 on `[att, h¹]`.
pub fn base_decode_step<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &DecoderVars,
    image: &ImageContext,
    state: &DecoderState,
    prev_embed: Var,
) -> Result<BaseStep, TensorError> {
    let in1 = tape.concat(&[prev_embed, image.global, state.h2])?;
    let (h1, c1) = lstm_cell(tape, vars.lstm1_w, vars.lstm1_b, in1, state.h1, state.c1)?;
    let query = tape.matmul(vars.att_h, h1)?;
    let alpha_v = additive_attention(tape, image.region_keys, query, vars.att_w)?;
    let att = tape.matmul(alpha_v, image.regions)?;
    let in2 = tape.concat(&[att, h1])?;
    let (h2, c2) = lstm_cell(tape, vars.lstm2_w, vars.lstm2_b, in2, state.h2, state.c2)?;
    Ok(BaseStep { state: DecoderState { h1, c1, h2, c2 }, alpha_v, att })
}

/// Attention over recalled-word embeddings: `α^r` and `ctx = Σ α^r_i x_i`.
pub fn recalled_attention<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &DecoderVars,
    recall: &RecallContext,
    h2: Var,
) -> Result<(Var, Var), TensorError> {
    let hq = tape.matmul(vars.rec_h, h2)?;
    let query = tape.add(hq, recall.image_term)?;
    let alpha_r = additive_attention(tape, recall.keys, query, vars.rec_w)?;
    let ctx = tape.matmul(alpha_r, recall.embeds)?;
    Ok((alpha_r, ctx))
}

/// Positions excluded from every output distribution.
pub fn output_mask(vocab_size: usize) -> Rc<[bool]> {
    (0..vocab_size).map(|w| w == PAD || w == BOS).collect()
}

/// Semantic-guide distribution `P^v = softmax(W_l [ctx, h²])` with `PAD` and `BOS` masked.
pub fn guide_distribution<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &DecoderVars,
    ctx: Var,
    h2: Var,
    mask: Rc<[bool]>,
) -> Result<Var, TensorError> {
    let joint = tape.concat(&[ctx, h2])?;
    let logits = tape.matmul(vars.logit, joint)?;
    tape.masked_softmax(logits, mask)
}

/// Copy distribution `P^r`: `α^r` placed on the recalled word ids.
pub fn copy_distribution<T: Scalar>(
    tape: &mut Tape<T>,
    alpha_r: Var,
    words: &[usize],
    vocab_size: usize,
) -> Result<Var, TensorError> {
    tape.scatter(alpha_r, words, vocab_size)
}

/// Switch `s = σ(w_sh·h² + w_sc·ctx + w_sx·X_{t-1} + b_s)` and `P = (1 - s) P^v + s P^r`.
pub fn switch_and_mix<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &DecoderVars,
    h2: Var,
    ctx: Var,
    prev_embed: Var,
    pv: Var,
    pr: Var,
) -> Result<(Var, Var), TensorError> {
    let a = tape.matmul(vars.switch_h, h2)?;
    let b = tape.matmul(vars.switch_c, ctx)?;
    let c = tape.matmul(vars.switch_x, prev_embed)?;
    let z = tape.add_n(&[a, b, c, vars.switch_b])?;
    let s = tape.sigmoid(z)?;
    let p = mix(tape, s, pv, pr)?;
    Ok((s, p))
}

/// `(1 - s) P^v + s P^r` for a scalar var `s`.
pub fn mix<T: Scalar>(tape: &mut Tape<T>, s: Var, pv: Var, pr: Var) -> Result<Var, TensorError> {
    let keep = tape.one_minus(s)?;
    let a = tape.mul_scalar(keep, pv)?;
    let b = tape.mul_scalar(s, pr)?;
    tape.add(a, b)
}

/// Everything one decoding step produced.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub state: DecoderState,
    /// Distribution the token is drawn from: `P`, or `P^v` when the switch is off.
    pub p: Var,
    pub pv: Var,
    pub pr: Option<Var>,
    /// `None` when the switch is forced to zero.
    pub s: Option<Var>,
    pub alpha_v: Var,
    pub alpha_r: Option<Var>,
    pub ctx: Var,
}

/// Inverted dropout on the word input and on `h2` where it feeds the output layers.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<T> = (0..tape.value(x).len())
            .map(|_| if self.rng.random::<f64>() < keep { T::lit(1.0 / keep) } else { T::zero() })
            .collect();
        let mask = tape.constant(Tensor::from_parts(tape.shape(x).to_vec(), mask));
        tape.mul(x, mask)
    }
}

/// Decodes one image on a tape. The parameters may be bound as trainable or constant.
pub struct Session<'t, T: Scalar> {
    pub tape: &'t mut Tape<T>,
    pub vars: DecoderVars,
    pub image: ImageContext,
    /// Use `P^v` alone, as if the switch were zero.
    pub switch_off: bool,
    /// Training-time dropout; `None` decodes deterministically.
    pub dropout: Option<Dropout>,
    copy_enabled: bool,
    hidden: usize,
    embed_dim: usize,
    vocab_size: usize,
    mask: Rc<[bool]>,
}

impl<'t, T: Scalar> Session<'t, T> {
    pub fn new(
        tape: &'t mut Tape<T>,
        params: &DecoderParams<T>,
        vars: DecoderVars,
        image: &ImageRecord,
        recalled: &RecalledWordSet,
        switch_off: bool,
    ) -> Result<Self, TensorError> {
        if image.feature_dim() != params.dims.feature_dim {
            return Err(TensorError::Shape {
                op: "decode",
                detail: format!("feature {} vs {}", image.feature_dim(), params.dims.feature_dim),
            });
        }
        if let Some(&w) = recalled.words().iter().find(|&&w| w >= params.dims.vocab_size) {
            return Err(TensorError::Usage(format!("recalled word id {} outside the vocabulary", w)));
        }
        let image = prepare_image(tape, &vars, image, recalled)?;
        Ok(Session {
            tape,
            vars,
            image,
            switch_off,
            dropout: None,
            copy_enabled: params.copy_enabled,
            hidden: params.dims.hidden,
            embed_dim: params.dims.embed_dim,
            vocab_size: params.dims.vocab_size,
            mask: output_mask(params.dims.vocab_size),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn start(&mut self) -> DecoderState {
        DecoderState::initial(self.tape, self.hidden)
    }

    pub fn step(&mut self, state: &DecoderState, prev: usize) -> Result<StepVars, TensorError> {
        let tape = &mut *self.tape;
        let vars = &self.vars;
        let mut prev_embed = tape.embedding_row(vars.embed, prev)?;
        if let Some(d) = self.dropout.as_mut() {
            prev_embed = d.apply(tape, prev_embed)?;
        }
        let base = base_decode_step(tape, vars, &self.image, state, prev_embed)?;
        let h2 = match self.dropout.as_mut() {
            Some(d) => d.apply(tape, base.state.h2)?,
            None => base.state.h2,
        };
        let (alpha_r, ctx) = match &self.image.recall {
            Some(recall) => {
                let (a, c) = recalled_attention(tape, vars, recall, h2)?;
                (Some(a), c)
            }
            None => (None, tape.constant(Tensor::zeros(&[self.embed_dim]))),
        };
        let pv = guide_distribution(tape, vars, ctx, h2, self.mask.clone())?;
        let mut out = StepVars { state: base.state, p: pv, pv, pr: None, s: None, alpha_v: base.alpha_v, alpha_r, ctx };
        if let (Some(a), Some(recall)) = (alpha_r, &self.image.recall) {
            let pr = copy_distribution(tape, a, &recall.words, self.vocab_size)?;
            out.pr = Some(pr);
            if self.copy_enabled && !self.switch_off {
                let (s, p) = switch_and_mix(tape, vars, h2, ctx, prev_embed, pv, pr)?;
                out.s = Some(s);
                out.p = p;
            }
        }
        Ok(out)
    }
}
