use rand::Rng;

use crate::params::{self, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::nn::{glorot, lstm_bias};
use crate::tensor::{Checkpoint, CheckpointError, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderDims {
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub attention_dim: usize,
}

impl DecoderDims {
    pub fn validate(&self) -> Result<(), TensorError> {
        let d = self;
        if [d.feature_dim, d.vocab_size, d.embed_dim, d.hidden, d.attention_dim].contains(&0) {
            return Err(TensorError::Usage("decoder dimensions must be positive".into()));
        }
        if d.vocab_size <= crate::vocab::RESERVED.len() {
            return Err(TensorError::Usage("decoder vocabulary has no ordinary words".into()));
        }
        Ok(())
    }
}

/// Every learned tensor of the captioner.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    pub dims: DecoderDims,
    /// When false the switch is clamped to zero and the copy branch is unused.
    pub copy_enabled: bool,
    pub embed: Tensor<T>,
    /// LSTM1 over `[X_{t-1}, v̄, h²_{t-1}]`, `[4H, E + D + H + H]`.
    pub lstm1_w: Tensor<T>,
    pub lstm1_b: Tensor<T>,
    /// `W_v¹`, `[A, D]`.
    pub att_v: Tensor<T>,
    /// `W_h¹`, `[A, H]`.
    pub att_h: Tensor<T>,
    /// `w_v`, `[A]`.
    pub att_w: Tensor<T>,
    /// LSTM2 over `[att, h¹]`, `[4H, D + H + H]`.
    pub lstm2_w: Tensor<T>,
    pub lstm2_b: Tensor<T>,
    /// `W_r`, `[A, E]`.
    pub rec_r: Tensor<T>,
    /// `W_h²`, `[A, H]`.
    pub rec_h: Tensor<T>,
    /// `W_v²`, `[A, D]`.
    pub rec_v: Tensor<T>,
    /// `w_x`, `[A]`.
    pub rec_w: Tensor<T>,
    /// `W_l`, `[V, E + H]`.
    pub logit: Tensor<T>,
    pub switch_h: Tensor<T>,
    pub switch_c: Tensor<T>,
    pub switch_x: Tensor<T>,
    /// `b_s`, a scalar.
    pub switch_b: Tensor<T>,
}

/// The parameters recorded on a tape, in [`ParamSet`] order.
#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub embed: Var,
    pub lstm1_w: Var,
    pub lstm1_b: Var,
    pub att_v: Var,
    pub att_h: Var,
    pub att_w: Var,
    pub lstm2_w: Var,
    pub lstm2_b: Var,
    pub rec_r: Var,
    pub rec_h: Var,
    pub rec_v: Var,
    pub rec_w: Var,
    pub logit: Var,
    pub switch_h: Var,
    pub switch_c: Var,
    pub switch_x: Var,
    pub switch_b: Var,
}

impl DecoderVars {
    pub fn from_slice(v: &[Var]) -> Self {
        DecoderVars {
            embed: v[0],
            lstm1_w: v[1],
            lstm1_b: v[2],
            att_v: v[3],
            att_h: v[4],
            att_w: v[5],
            lstm2_w: v[6],
            lstm2_b: v[7],
            rec_r: v[8],
            rec_h: v[9],
            rec_v: v[10],
            rec_w: v[11],
            logit: v[12],
            switch_h: v[13],
            switch_c: v[14],
            switch_x: v[15],
            switch_b: v[16],
        }
    }

    pub fn all(&self) -> Vec<Var> {
        vec![
            self.embed,
            self.lstm1_w,
            self.lstm1_b,
            self.att_v,
            self.att_h,
            self.att_w,
            self.lstm2_w,
            self.lstm2_b,
            self.rec_r,
            self.rec_h,
            self.rec_v,
            self.rec_w,
            self.logit,
            self.switch_h,
            self.switch_c,
            self.switch_x,
            self.switch_b,
        ]
    }
}

impl<T: Scalar> ParamSet<T> for DecoderParams<T> {
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("embed", &self.embed),
            ("lstm1_w", &self.lstm1_w),
            ("lstm1_b", &self.lstm1_b),
            ("att_v", &self.att_v),
            ("att_h", &self.att_h),
            ("att_w", &self.att_w),
            ("lstm2_w", &self.lstm2_w),
            ("lstm2_b", &self.lstm2_b),
            ("rec_r", &self.rec_r),
            ("rec_h", &self.rec_h),
            ("rec_v", &self.rec_v),
            ("rec_w", &self.rec_w),
            ("logit", &self.logit),
            ("switch_h", &self.switch_h),
            ("switch_c", &self.switch_c),
            ("switch_x", &self.switch_x),
            ("switch_b", &self.switch_b),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.embed,
            &mut self.lstm1_w,
            &mut self.lstm1_b,
            &mut self.att_v,
            &mut self.att_h,
            &mut self.att_w,
            &mut self.lstm2_w,
            &mut self.lstm2_b,
            &mut self.rec_r,
            &mut self.rec_h,
            &mut self.rec_v,
            &mut self.rec_w,
            &mut self.logit,
            &mut self.switch_h,
            &mut self.switch_c,
            &mut self.switch_x,
            &mut self.switch_b,
        ]
    }
}

const PREFIX: &str = "decoder";

impl<T: Scalar> DecoderParams<T> {
    pub fn new<R: Rng + ?Sized>(dims: DecoderDims, copy_enabled: bool, rng: &mut R) -> Result<Self, TensorError> {
        dims.validate()?;
        let DecoderDims { feature_dim: d, vocab_size: v, embed_dim: e, hidden: h, attention_dim: a } = dims;
        let vec_init = |n: usize, rng: &mut R| Tensor::uniform(&[n], (3.0 / n as f64).sqrt(), rng);
        Ok(DecoderParams {
            dims,
            copy_enabled,
            embed: Tensor::uniform(&[v, e], 0.1, rng),
            lstm1_w: glorot(4 * h, e + d + 2 * h, rng),
            lstm1_b: lstm_bias(h),
            att_v: glorot(a, d, rng),
            att_h: glorot(a, h, rng),
            att_w: vec_init(a, rng),
            lstm2_w: glorot(4 * h, d + 2 * h, rng),
            lstm2_b: lstm_bias(h),
            rec_r: glorot(a, e, rng),
            rec_h: glorot(a, h, rng),
            rec_v: glorot(a, d, rng),
            rec_w: vec_init(a, rng),
            logit: glorot(v, e + h, rng),
            switch_h: Tensor::uniform(&[h], 0.1, rng),
            switch_c: Tensor::uniform(&[e], 0.1, rng),
            switch_x: Tensor::uniform(&[e], 0.1, rng),
            switch_b: Tensor::from_parts(vec![], vec![T::zero()]),
        })
    }

    pub fn zeros(dims: DecoderDims, copy_enabled: bool) -> Result<Self, TensorError> {
        dims.validate()?;
        let DecoderDims { feature_dim: d, vocab_size: v, embed_dim: e, hidden: h, attention_dim: a } = dims;
        Ok(DecoderParams {
            dims,
            copy_enabled,
            embed: Tensor::zeros(&[v, e]),
            lstm1_w: Tensor::zeros(&[4 * h, e + d + 2 * h]),
            lstm1_b: Tensor::zeros(&[4 * h]),
            att_v: Tensor::zeros(&[a, d]),
            att_h: Tensor::zeros(&[a, h]),
            att_w: Tensor::zeros(&[a]),
            lstm2_w: Tensor::zeros(&[4 * h, d + 2 * h]),
            lstm2_b: Tensor::zeros(&[4 * h]),
            rec_r: Tensor::zeros(&[a, e]),
            rec_h: Tensor::zeros(&[a, h]),
            rec_v: Tensor::zeros(&[a, d]),
            rec_w: Tensor::zeros(&[a]),
            logit: Tensor::zeros(&[v, e + h]),
            switch_h: Tensor::zeros(&[h]),
            switch_c: Tensor::zeros(&[e]),
            switch_x: Tensor::zeros(&[e]),
            switch_b: Tensor::zeros(&[]),
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> DecoderVars {
        DecoderVars::from_slice(&params::bind(self, tape, trainable))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let d = self.dims;
        let meta = [d.feature_dim, d.vocab_size, d.embed_dim, d.hidden, d.attention_dim, self.copy_enabled as usize];
        ck.push(format!("{}.meta", PREFIX), &Tensor::<f64>::from_parts(vec![6], meta.map(|x| x as f64).to_vec()));
        params::save_params(self, PREFIX, &mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let meta = ck.load::<f64>(&format!("{}.meta", PREFIX), Some(&[6]))?;
        let m: Vec<usize> = meta.data().iter().map(|&x| x as usize).collect();
        let dims =
            DecoderDims { feature_dim: m[0], vocab_size: m[1], embed_dim: m[2], hidden: m[3], attention_dim: m[4] };
        let mut p = Self::zeros(dims, m[5] != 0).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params::load_params(&mut p, PREFIX, ck)?;
        Ok(p)
    }
}
