//! Tunable settings: a named preset, then a key=value file, then command-line overrides.

use std::fmt;
use std::path::Path;

use clap::ValueEnum;

use super::CliError;
use crate::decoder::{DecoderDims, DEFAULT_BEAM, DEFAULT_MAX_LEN};
use crate::objectives::optim::LrSchedule;
use crate::objectives::{Phase, TrainConfig};
use crate::retrieval::{RetrievalDims, RetrievalTrainConfig, DEFAULT_K, DEFAULT_MARGIN};
use crate::synth::SyntheticSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small models and few epochs; runs in minutes on one core.
    Desk,
    /// Published model sizes and schedules.
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    // synthetic data
    pub vocab: usize,
    pub images: usize,
    pub feature_dim: usize,
    pub regions: usize,
    pub captions: usize,
    pub concepts: usize,
    pub noise: f64,
    pub ordered_prob: f64,
    pub drop_prob: f64,
    pub concept_skew: f64,
    // retrieval
    pub ret_embed: usize,
    pub ret_hidden: usize,
    pub ret_attention: usize,
    pub margin: f64,
    pub ret_epochs: usize,
    pub ret_batch: usize,
    pub ret_lr: f64,
    pub ret_decay: f64,
    pub ret_decay_every: usize,
    pub k: usize,
    pub exclude_own: bool,
    // captioning
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub copy: bool,
    pub xe_epochs: usize,
    pub xe_batch: usize,
    pub xe_lr: f64,
    pub xe_decay: f64,
    pub xe_decay_every: usize,
    pub dropout: f64,
    pub rl_epochs: usize,
    pub rl_batch: usize,
    pub rl_lr: f64,
    pub rl_decay: f64,
    pub rl_decay_every: usize,
    pub lambda: f64,
    pub shared_stream: bool,
    pub clip_norm: f64,
    pub beam: usize,
    pub max_len: usize,
}

impl Settings {
    pub fn preset(preset: Preset) -> Self {
        let desk = Settings {
            seed: 7,
            vocab: 60,
            images: 200,
            feature_dim: 16,
            regions: 3,
            captions: 5,
            concepts: 3,
            noise: 0.1,
            ordered_prob: 0.6,
            drop_prob: 0.05,
            concept_skew: 0.0,
            ret_embed: 32,
            ret_hidden: 32,
            ret_attention: 16,
            margin: DEFAULT_MARGIN,
            ret_epochs: 30,
            ret_batch: 32,
            ret_lr: 5e-3,
            ret_decay: 0.8,
            ret_decay_every: 10,
            k: DEFAULT_K,
            exclude_own: true,
            embed: 64,
            hidden: 64,
            attention: 32,
            copy: true,
            xe_epochs: 40,
            xe_batch: 32,
            xe_lr: 5e-3,
            xe_decay: 0.8,
            xe_decay_every: 10,
            dropout: 0.0,
            rl_epochs: 10,
            rl_batch: 16,
            rl_lr: 5e-5,
            rl_decay: 0.1,
            rl_decay_every: 50,
            lambda: 0.5,
            shared_stream: false,
            clip_norm: 5.0,
            beam: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => Settings {
                ret_embed: 512,
                ret_hidden: 1024,
                ret_attention: 512,
                ret_batch: 128,
                ret_lr: 5e-4,
                ret_decay: 0.8,
                ret_decay_every: 3,
                embed: 1024,
                hidden: 1024,
                attention: 512,
                xe_epochs: 30,
                xe_batch: 64,
                xe_lr: 5e-4,
                xe_decay: 0.8,
                xe_decay_every: 3,
                rl_epochs: 100,
                rl_batch: 64,
                rl_lr: 5e-5,
                rl_decay: 0.1,
                rl_decay_every: 50,
                ..desk
            },
        }
    }

    /// Sets one value by name.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
            value.parse().map_err(|_| CliError::Usage(format!("invalid value `{}` for setting `{}`", value, key)))
        }
        macro_rules! set {
            ($($name:ident),* $(,)?) => {
                match key {
                    $(stringify!($name) => self.$name = parse(key, value)?,)*
                    _ => return Err(CliError::Usage(format!("unknown setting `{}`", key))),
                }
            };
        }
        set!(
            seed,
            vocab,
            images,
            feature_dim,
            regions,
            captions,
            concepts,
            noise,
            ordered_prob,
            drop_prob,
            concept_skew,
            ret_embed,
            ret_hidden,
            ret_attention,
            margin,
            ret_epochs,
            ret_batch,
            ret_lr,
            ret_decay,
            ret_decay_every,
            k,
            exclude_own,
            embed,
            hidden,
            attention,
            copy,
            xe_epochs,
            xe_batch,
            xe_lr,
            xe_decay,
            xe_decay_every,
            dropout,
            rl_epochs,
            rl_batch,
            rl_lr,
            rl_decay,
            rl_decay_every,
            lambda,
            shared_stream,
            clip_norm,
            beam,
            max_len,
        );
        Ok(())
    }

    /// Applies a `key=value` pair.
    pub fn apply_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, value) =
            pair.split_once('=').ok_or_else(|| CliError::Usage(format!("expected key=value, got `{}`", pair)))?;
        self.apply(key.trim(), value.trim())
    }

    /// Applies every `key = value` line of a settings file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        if !path.exists() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_pair(line).map_err(|e| CliError::Usage(format!("{} line {}: {}", path.display(), n + 1, e)))?;
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            vocab_size: self.vocab,
            feature_dim: self.feature_dim,
            regions: self.regions,
            num_images: self.images,
            captions_per_image: self.captions,
            concepts_per_image: self.concepts,
            noise: self.noise,
            ordered_prob: self.ordered_prob,
            drop_prob: self.drop_prob,
            concept_skew: self.concept_skew,
            seed: self.seed,
        }
    }

    pub fn retrieval_dims(&self, feature_dim: usize, vocab_size: usize) -> RetrievalDims {
        RetrievalDims {
            feature_dim,
            vocab_size,
            embed_dim: self.ret_embed,
            hidden: self.ret_hidden,
            attention_dim: self.ret_attention,
        }
    }

    pub fn retrieval_train(&self) -> RetrievalTrainConfig {
        RetrievalTrainConfig {
            epochs: self.ret_epochs,
            batch_size: self.ret_batch,
            schedule: LrSchedule { base: self.ret_lr, factor: self.ret_decay, every: self.ret_decay_every },
            clip_norm: self.clip(),
            seed: self.seed,
        }
    }

    pub fn decoder_dims(&self, feature_dim: usize, vocab_size: usize) -> DecoderDims {
        DecoderDims {
            feature_dim,
            vocab_size,
            embed_dim: self.embed,
            hidden: self.hidden,
            attention_dim: self.attention,
        }
    }

    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        let base = match phase {
            Phase::Xe => TrainConfig {
                schedule: LrSchedule { base: self.xe_lr, factor: self.xe_decay, every: self.xe_decay_every },
                batch_size: self.xe_batch,
                epochs: self.xe_epochs,
                dropout: self.dropout,
                ..TrainConfig::xe()
            },
            Phase::Rl => TrainConfig {
                schedule: LrSchedule { base: self.rl_lr, factor: self.rl_decay, every: self.rl_decay_every },
                batch_size: self.rl_batch,
                epochs: self.rl_epochs,
                ..TrainConfig::rl()
            },
        };
        TrainConfig {
            lambda: self.lambda,
            clip_norm: self.clip(),
            seed: self.seed,
            max_len: self.max_len,
            shared_stream: self.shared_stream,
            ..base
        }
    }

    fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }
}
