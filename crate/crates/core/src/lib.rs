//! Retrieval-augmented image captioning: a triplet-trained image-caption retrieval model
//! recalls words for each image, and a two-layer attention LSTM decoder mixes a vocabulary
//! distribution with a copy distribution over the recalled words.
//!
//! The numeric core is generic over [`scalar::Scalar`]; the aliases below fix it to `f64`.

pub mod cli;
pub mod data;
pub mod decoder;
pub mod metrics;
pub mod objectives;
pub mod params;
pub mod retrieval;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod vocab;

#[cfg(test)]
pub(crate) mod oracle;

/// Default element type.
pub type Real = f64;
pub type Tensor = tensor::Tensor<Real>;
pub type Tape = tensor::Tape<Real>;
pub type DecoderParams = decoder::DecoderParams<Real>;
pub type RetrievalModel = retrieval::RetrievalModel<Real>;
