//! Training objectives for the captioner and the optimizer they share.

pub mod optim;
mod rl;
mod train;
mod xe;

pub use rl::{
    combined_loss, combined_rl_step, recalled_word_reward, reward, sample_with_logprob, scst_loss, RewardBundle,
    RlSample,
};
pub use train::{
    decode_split, evaluate_split, perplexity, recalled_for, reward_stats, score_captions, train_rl, train_xe,
    write_training_log, EpochLog, Phase, TrainConfig, TrainError,
};
pub use xe::{caption_cross_entropy, cross_entropy_loss, CrossEntropy, PROB_FLOOR};
