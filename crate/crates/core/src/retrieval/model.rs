use rand::Rng;

use crate::params::{self, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::kernels::{dot, matvec, softmax_into};
use crate::tensor::nn::{additive_attention, glorot, lstm_bias, lstm_cell};
use crate::tensor::{Checkpoint, CheckpointError, Tape, Tensor, TensorError, Var};

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetrievalDims {
    /// Region feature size `D`.
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Joint space size `H`; each encoder direction has `H / 2` units.
    pub hidden: usize,
    pub attention_dim: usize,
}

impl RetrievalDims {
    pub fn validate(&self) -> Result<(), TensorError> {
        let d = self;
        if d.feature_dim == 0 || d.vocab_size == 0 || d.embed_dim == 0 || d.attention_dim == 0 {
            return Err(TensorError::Usage("retrieval dimensions must be positive".into()));
        }
        if d.hidden < 2 || !d.hidden.is_multiple_of(2) {
            return Err(TensorError::Usage(format!("hidden size {} must be even and positive", d.hidden)));
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.hidden / 2
    }
}

/// Image and caption encoders mapping both modalities into one `H`-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalModel<T> {
    pub dims: RetrievalDims,
    pub margin: f64,
    /// `W_I`, `[H, D]`.
    pub image_proj: Tensor<T>,
    pub embed: Tensor<T>,
    pub fwd_w: Tensor<T>,
    pub fwd_b: Tensor<T>,
    pub bwd_w: Tensor<T>,
    pub bwd_b: Tensor<T>,
    /// `W_{s,u}`, `[A, H]`.
    pub att_state: Tensor<T>,
    /// `W_v`, `[A, D]`.
    pub att_image: Tensor<T>,
    /// `w_s`, `[A]`.
    pub att_w: Tensor<T>,
}

/// The model's parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RetrievalVars {
    pub image_proj: Var,
    pub embed: Var,
    pub fwd_w: Var,
    pub fwd_b: Var,
    pub bwd_w: Var,
    pub bwd_b: Var,
    pub att_state: Var,
    pub att_image: Var,
    pub att_w: Var,
}

impl RetrievalVars {
    /// Inverse of [`RetrievalVars::all`].
    pub fn from_slice(v: &[Var]) -> Self {
        RetrievalVars {
            image_proj: v[0],
            embed: v[1],
            fwd_w: v[2],
            fwd_b: v[3],
            bwd_w: v[4],
            bwd_b: v[5],
            att_state: v[6],
            att_image: v[7],
            att_w: v[8],
        }
    }

    pub fn all(&self) -> Vec<Var> {
        vec![
            self.image_proj,
            self.embed,
            self.fwd_w,
            self.fwd_b,
            self.bwd_w,
            self.bwd_b,
            self.att_state,
            self.att_image,
            self.att_w,
        ]
    }
}

impl<T: Scalar> ParamSet<T> for RetrievalModel<T> {
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("image_proj", &self.image_proj),
            ("embed", &self.embed),
            ("fwd_w", &self.fwd_w),
            ("fwd_b", &self.fwd_b),
            ("bwd_w", &self.bwd_w),
            ("bwd_b", &self.bwd_b),
            ("att_state", &self.att_state),
            ("att_image", &self.att_image),
            ("att_w", &self.att_w),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.image_proj,
            &mut self.embed,
            &mut self.fwd_w,
            &mut self.fwd_b,
            &mut self.bwd_w,
            &mut self.bwd_b,
            &mut self.att_state,
            &mut self.att_image,
            &mut self.att_w,
        ]
    }
}

const PREFIX: &str = "retrieval";

impl<T: Scalar> RetrievalModel<T> {
    pub fn new<R: Rng + ?Sized>(dims: RetrievalDims, margin: f64, rng: &mut R) -> Result<Self, TensorError> {
        dims.validate()?;
        let RetrievalDims { feature_dim: d, vocab_size: v, embed_dim: e, hidden: h, attention_dim: a } = dims;
        let half = dims.half();
        Ok(RetrievalModel {
            dims,
            margin,
            image_proj: glorot(h, d, rng),
            embed: Tensor::uniform(&[v, e], 0.1, rng),
            fwd_w: glorot(4 * half, e + half, rng),
            fwd_b: lstm_bias(half),
            bwd_w: glorot(4 * half, e + half, rng),
            bwd_b: lstm_bias(half),
            att_state: glorot(a, h, rng),
            att_image: glorot(a, d, rng),
            att_w: Tensor::uniform(&[a], (3.0 / a as f64).sqrt(), rng),
        })
    }

    /// A model with every parameter zero.
    pub fn zeros(dims: RetrievalDims, margin: f64) -> Result<Self, TensorError> {
        dims.validate()?;
        let RetrievalDims { feature_dim: d, vocab_size: v, embed_dim: e, hidden: h, attention_dim: a } = dims;
        let half = dims.half();
        Ok(RetrievalModel {
            dims,
            margin,
            image_proj: Tensor::zeros(&[h, d]),
            embed: Tensor::zeros(&[v, e]),
            fwd_w: Tensor::zeros(&[4 * half, e + half]),
            fwd_b: Tensor::zeros(&[4 * half]),
            bwd_w: Tensor::zeros(&[4 * half, e + half]),
            bwd_b: Tensor::zeros(&[4 * half]),
            att_state: Tensor::zeros(&[a, h]),
            att_image: Tensor::zeros(&[a, d]),
            att_w: Tensor::zeros(&[a]),
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> RetrievalVars {
        RetrievalVars::from_slice(&params::bind(self, tape, trainable))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let d = self.dims;
        let meta = [d.feature_dim, d.vocab_size, d.embed_dim, d.hidden, d.attention_dim].map(|x| x as f64);
        ck.push(format!("{}.dims", PREFIX), &Tensor::<f64>::from_parts(vec![5], meta.to_vec()));
        ck.push(format!("{}.margin", PREFIX), &Tensor::<f64>::from_parts(vec![1], vec![self.margin]));
        params::save_params(self, PREFIX, &mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let meta = ck.load::<f64>(&format!("{}.dims", PREFIX), Some(&[5]))?;
        let m = meta.data();
        let dims = RetrievalDims {
            feature_dim: m[0] as usize,
            vocab_size: m[1] as usize,
            embed_dim: m[2] as usize,
            hidden: m[3] as usize,
            attention_dim: m[4] as usize,
        };
        let margin = ck.load::<f64>(&format!("{}.margin", PREFIX), Some(&[1]))?.data()[0];
        let mut model = Self::zeros(dims, margin).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params::load_params(&mut model, PREFIX, ck)?;
        Ok(model)
    }
}

/// `f(I) = W_I v̄`.
pub fn embed_image<T: Scalar>(tape: &mut Tape<T>, vars: &RetrievalVars, global: Var) -> Result<Var, TensorError> {
    tape.matmul(vars.image_proj, global)
}

/// Bidirectional encoder states `[n, H]`, row `i` being `[forward_i, backward_i]`.
pub fn encode_caption<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &RetrievalVars,
    tokens: &[usize],
) -> Result<Var, TensorError> {
    if tokens.is_empty() {
        return Err(TensorError::Usage("cannot encode an empty caption".into()));
    }
    let half = tape.shape(vars.fwd_b)[0] / 4;
    let emb = tape.embedding(vars.embed, tokens)?;
    let xs = (0..tokens.len()).map(|i| tape.row(emb, i)).collect::<Result<Vec<_>, _>>()?;
    let run = |tape: &mut Tape<T>, w: Var, b: Var, order: &mut dyn Iterator<Item = usize>| {
        let mut h = tape.constant(Tensor::zeros(&[half]));
        let mut c = tape.constant(Tensor::zeros(&[half]));
        let mut out = vec![h; tokens.len()];
        for i in order {
            let (h2, c2) = lstm_cell(tape, w, b, xs[i], h, c)?;
            h = h2;
            c = c2;
            out[i] = h;
        }
        Ok::<_, TensorError>(out)
    };
    let fwd = run(tape, vars.fwd_w, vars.fwd_b, &mut (0..tokens.len()))?;
    let bwd = run(tape, vars.bwd_w, vars.bwd_b, &mut (0..tokens.len()).rev())?;
    let rows = fwd.iter().zip(&bwd).map(|(&f, &b)| tape.concat(&[f, b])).collect::<Result<Vec<_>, _>>()?;
    tape.stack(&rows)
}

/// Attention keys `S W_{s,u}ᵀ`, `[n, A]`; these do not depend on the image.
pub fn state_keys<T: Scalar>(tape: &mut Tape<T>, vars: &RetrievalVars, states: Var) -> Result<Var, TensorError> {
    let wt = tape.transpose(vars.att_state)?;
    tape.matmul(states, wt)
}

/// Pooled caption vector `g(C) = Σ α_i s_i` with `α = softmax(w_s · tanh(W_{s,u} s_i + W_v v̄))`.
pub fn attend_pool<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &RetrievalVars,
    states: Var,
    global: Var,
) -> Result<Var, TensorError> {
    let keys = state_keys(tape, vars, states)?;
    let query = tape.matmul(vars.att_image, global)?;
    pool_with_keys(tape, vars, states, keys, query)
}

pub(crate) fn pool_with_keys<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &RetrievalVars,
    states: Var,
    keys: Var,
    query: Var,
) -> Result<Var, TensorError> {
    let alpha = additive_attention(tape, keys, query, vars.att_w)?;
    tape.matmul(alpha, states)
}

/// Cosine similarity `f·g / (‖f‖‖g‖)`; a zero vector is a numeric error.
pub fn similarity<T: Scalar>(tape: &mut Tape<T>, f: Var, g: Var) -> Result<Var, TensorError> {
    let f = tape.normalize(f)?;
    let g = tape.normalize(g)?;
    tape.matmul(f, g)
}

/// Cosine similarity of plain vectors.
pub fn cosine<T: Scalar>(f: &[T], g: &[T]) -> Result<T, TensorError> {
    if f.len() != g.len() {
        return Err(TensorError::Shape { op: "cosine", detail: format!("{} vs {}", f.len(), g.len()) });
    }
    let (nf, ng) = (dot(f, f).sqrt(), dot(g, g).sqrt());
    if !(nf > T::zero() && ng > T::zero()) {
        return Err(TensorError::NonFinite { op: "cosine" });
    }
    Ok(dot(f, g) / (nf * ng))
}

/// A caption encoded once for repeated scoring against many images.
#[derive(Clone, Debug)]
pub struct EncodedCaption<T> {
    pub states: Tensor<T>,
    pub keys: Tensor<T>,
}

/// Image-side quantities for scoring: `f(I)` and the attention query `W_v v̄`.
#[derive(Clone, Debug)]
pub struct ImageQuery<T> {
    pub embedding: Vec<T>,
    pub query: Vec<T>,
}

impl<T: Scalar> RetrievalModel<T> {
    pub fn encode(&self, tokens: &[usize]) -> Result<EncodedCaption<T>, TensorError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let states = encode_caption(&mut tape, &vars, tokens)?;
        let keys = state_keys(&mut tape, &vars, states)?;
        Ok(EncodedCaption { states: tape.value(states).clone(), keys: tape.value(keys).clone() })
    }

    pub fn query(&self, global: &[T]) -> Result<ImageQuery<T>, TensorError> {
        let d = self.dims.feature_dim;
        if global.len() != d {
            return Err(TensorError::Shape { op: "embed_image", detail: format!("feature {} vs {}", global.len(), d) });
        }
        let mut embedding = vec![T::zero(); self.dims.hidden];
        matvec(self.image_proj.data(), self.dims.hidden, d, global, &mut embedding);
        let mut query = vec![T::zero(); self.dims.attention_dim];
        matvec(self.att_image.data(), self.dims.attention_dim, d, global, &mut query);
        Ok(ImageQuery { embedding, query })
    }

    /// Pooled caption vector for one image, evaluated without a tape.
    pub fn pooled(&self, caption: &EncodedCaption<T>, image: &ImageQuery<T>) -> Vec<T> {
        let (n, a, h) = (caption.states.shape()[0], self.dims.attention_dim, self.dims.hidden);
        let w = self.att_w.data();
        let mut scores = vec![T::zero(); n];
        let mut act = vec![T::zero(); a];
        for (i, s) in scores.iter_mut().enumerate() {
            for ((x, &k), &q) in act.iter_mut().zip(caption.keys.row(i)).zip(&image.query) {
                *x = (k + q).tanh();
            }
            *s = dot(&act, w);
        }
        let mut alpha = vec![T::zero(); n];
        softmax_into(&scores, None, &mut alpha);
        let mut g = vec![T::zero(); h];
        for (i, &al) in alpha.iter().enumerate() {
            for (x, &s) in g.iter_mut().zip(caption.states.row(i)) {
                *x += al * s;
            }
        }
        g
    }

    /// Similarity of an image to a caption.
    pub fn score(&self, caption: &EncodedCaption<T>, image: &ImageQuery<T>) -> Result<T, TensorError> {
        cosine(&image.embedding, &self.pooled(caption, image))
    }
}
