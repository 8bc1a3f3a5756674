//! Text retrieval: a joint image/caption embedding trained with a hard-negative
//! triplet loss, top-K caption search, and the recalled-word sets built from it.

mod loss;
mod model;
mod search;
mod train;

pub use loss::{triplet_loss, triplet_loss_value};
pub use model::{
    attend_pool, cosine, embed_image, encode_caption, similarity, state_keys, EncodedCaption, ImageQuery,
    RetrievalDims, RetrievalModel, RetrievalVars, DEFAULT_MARGIN,
};
pub use search::{
    build_recall_cache, build_recalled_words, retrieve_top_k, select_top_k, CorpusIndex, RecallCache, RecallSummary,
    RecalledWordSet, TopK, DEFAULT_K,
};
pub use train::{batch_loss, recall_at_k, train_retrieval, RetrievalEpoch, RetrievalTrainConfig};
