//! The captioner: an Up-Down two-LSTM decoder extended with attention over
//! recalled words, a semantic-guide distribution, a copy distribution over the
//! recalled words and a soft switch mixing the two.

mod output;
mod params;
mod search;
mod step;

use rand::Rng;

pub use output::{read_captions, write_captions, CaptionRecord};
pub use params::{DecoderDims, DecoderParams, DecoderVars};
pub use search::{
    argmax, beam_search, draw, greedy, sample, score, Decoded, FnStepper, StepDist, Stepper, DEFAULT_BEAM,
};
pub use step::{
    base_decode_step, copy_distribution, guide_distribution, mix, output_mask, prepare_image, recalled_attention,
    switch_and_mix, BaseStep, DecoderState, Dropout, ImageContext, RecallContext, Session, StepVars,
};

use crate::data::ImageRecord;
use crate::retrieval::RecalledWordSet;
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorError};

pub const DEFAULT_MAX_LEN: usize = 16;

/// How a caption is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

impl<T: Scalar> DecoderParams<T> {
    /// Decodes one image with frozen parameters.
    pub fn decode(
        &self,
        image: &ImageRecord,
        recalled: &RecalledWordSet,
        strategy: Strategy,
        max_len: usize,
        switch_off: bool,
    ) -> Result<Decoded, TensorError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let mut session = Session::new(&mut tape, self, vars, image, recalled, switch_off)?;
        match strategy {
            Strategy::Greedy => greedy(&mut session, max_len),
            Strategy::Beam(b) => beam_search(&mut session, b, max_len),
        }
    }

    /// Samples one caption with frozen parameters.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        image: &ImageRecord,
        recalled: &RecalledWordSet,
        max_len: usize,
        switch_off: bool,
        rng: &mut R,
    ) -> Result<Decoded, TensorError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let mut session = Session::new(&mut tape, self, vars, image, recalled, switch_off)?;
        sample(&mut session, max_len, rng)
    }
}
