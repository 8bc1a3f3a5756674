use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::optim::{Adam, LrSchedule};
use super::rl::combined_rl_step;
use super::xe::caption_cross_entropy;
use crate::data::{DataError, Dataset, ImageRecord, Split};
use crate::decoder::{Decoded, DecoderParams, Dropout, Session, Strategy, DEFAULT_MAX_LEN};
use crate::metrics::{build_df, evaluate, EvaluationReport, MetricError, NgramStats};
use crate::params::{collect_grads, ParamSet};
use crate::retrieval::{RecallCache, RecalledWordSet};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorError};
use crate::vocab::strip_eos;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no recalled words cached for image `{0}`")]
    MissingRecall(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Xe,
    Rl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    /// Weight of the switch-off SCST term in the combined loss.
    pub lambda: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    /// Dropout rate on the decoder's word input and output state during cross-entropy training.
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub max_len: usize,
    /// Draw `w^s` and `w^ŝ` from identically seeded streams.
    pub shared_stream: bool,
    /// Decoding used for the per-epoch validation scores.
    pub val_strategy: Strategy,
    /// Restore the parameters of the epoch with the best validation CIDEr-D at the end.
    pub keep_best: bool,
}

impl TrainConfig {
    /// Cross-entropy phase: lr 5e-4 decayed by 0.8 every 3 epochs, batch 64.
    pub fn xe() -> Self {
        TrainConfig {
            phase: Phase::Xe,
            lambda: 0.5,
            schedule: LrSchedule { base: 5e-4, factor: 0.8, every: 3 },
            batch_size: 64,
            clip_norm: Some(5.0),
            dropout: 0.0,
            epochs: 30,
            seed: 1,
            max_len: DEFAULT_MAX_LEN,
            shared_stream: false,
            val_strategy: Strategy::Greedy,
            keep_best: true,
        }
    }

    /// CIDEr optimization phase: lr 5e-5 decayed by 0.1 every 50 epochs, λ = 0.5.
    pub fn rl() -> Self {
        TrainConfig {
            phase: Phase::Rl,
            schedule: LrSchedule { base: 5e-5, factor: 0.1, every: 50 },
            keep_best: false,
            ..Self::xe()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.schedule.base > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err(TrainError::Config("batch size and max length must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    pub loss: f64,
    pub mean_r_s: Option<f64>,
    pub mean_r_s_off: Option<f64>,
    pub mean_wr: Option<f64>,
    pub val_cider: Option<f64>,
    pub val_bleu4: Option<f64>,
    /// Teacher-forced validation perplexity (cross-entropy phase only).
    pub val_perplexity: Option<f64>,
    pub lr: f64,
}

pub fn write_training_log(path: &Path, rows: &[EpochLog]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    DataError::io(path, std::io::Error::other(e))
}

/// The cached recalled words of `image`.
pub fn recalled_for<'a>(recall: &'a RecallCache, image: &ImageRecord) -> Result<&'a RecalledWordSet, TrainError> {
    recall.get(&image.id).ok_or_else(|| TrainError::MissingRecall(image.id.clone()))
}

/// Decodes every image of `split`.
pub fn decode_split<'d, T: Scalar>(
    params: &DecoderParams<T>,
    dataset: &'d Dataset,
    recall: &RecallCache,
    split: Split,
    strategy: Strategy,
    max_len: usize,
) -> Result<Vec<(&'d ImageRecord, Decoded)>, TrainError> {
    dataset
        .split(split)
        .map(|image| {
            let rec = recalled_for(recall, image)?;
            Ok((image, params.decode(image, rec, strategy, max_len, false)?))
        })
        .collect()
}

/// Metrics of decoded captions against their images' references.
pub fn score_captions(decoded: &[(&ImageRecord, Decoded)]) -> Result<EvaluationReport, TrainError> {
    let cands: Vec<Vec<usize>> = decoded.iter().map(|(_, d)| strip_eos(&d.tokens).to_vec()).collect();
    let refs: Vec<Vec<Vec<usize>>> = decoded.iter().map(|(i, _)| i.references()).collect();
    Ok(evaluate(&cands, &refs)?)
}

pub fn evaluate_split<T: Scalar>(
    params: &DecoderParams<T>,
    dataset: &Dataset,
    recall: &RecallCache,
    split: Split,
    strategy: Strategy,
    max_len: usize,
) -> Result<EvaluationReport, TrainError> {
    score_captions(&decode_split(params, dataset, recall, split, strategy, max_len)?)
}

/// Per-token perplexity of the reference captions under teacher forcing.
pub fn perplexity<T: Scalar>(
    params: &DecoderParams<T>,
    dataset: &Dataset,
    recall: &RecallCache,
    split: Split,
) -> Result<f64, TrainError> {
    let (mut nll, mut tokens) = (0.0, 0usize);
    for image in dataset.split(split) {
        let rec = recalled_for(recall, image)?;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let mut session = Session::new(&mut tape, params, vars, image, rec, false)?;
        for c in &image.captions {
            let ce = caption_cross_entropy(&mut session, c)?;
            nll += session.tape.item(ce.loss).as_f64();
            tokens += ce.tokens;
        }
    }
    if tokens == 0 {
        return Err(TrainError::Config(format!("split {} has no captions", split)));
    }
    Ok((nll / tokens as f64).exp())
}

fn validation<T: Scalar>(
    params: &DecoderParams<T>,
    dataset: &Dataset,
    recall: &RecallCache,
    cfg: &TrainConfig,
) -> Result<Option<EvaluationReport>, TrainError> {
    if dataset.split(Split::Val).next().is_none() {
        return Ok(None);
    }
    evaluate_split(params, dataset, recall, Split::Val, cfg.val_strategy, cfg.max_len).map(Some)
}

struct BestTracker<T> {
    best: Option<(f64, DecoderParams<T>)>,
}

impl<T: Scalar> BestTracker<T> {
    fn offer(&mut self, score: Option<f64>, params: &DecoderParams<T>) {
        if let Some(s) = score {
            if self.best.as_ref().is_none_or(|(b, _)| s > *b) {
                self.best = Some((s, params.clone()));
            }
        }
    }
}

/// Cross-entropy training with teacher forcing over every training caption.
pub fn train_xe<T: Scalar>(
    params: &mut DecoderParams<T>,
    dataset: &Dataset,
    recall: &RecallCache,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, TrainError> {
    cfg.validate()?;
    let mut pairs: Vec<(&ImageRecord, &RecalledWordSet, &[usize])> = Vec::new();
    for image in dataset.split(Split::Train) {
        let rec = recalled_for(recall, image)?;
        pairs.extend(image.captions.iter().map(|c| (image, rec, c.as_slice())));
    }
    if pairs.is_empty() {
        return Err(TrainError::Config("no training captions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d809);
    let mut opt = Adam::new(cfg.clip_norm);
    let mut best = BestTracker { best: None };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.at(epoch);
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let mut losses = Vec::with_capacity(batch.len());
            for &(image, rec, caption) in batch {
                let mut session = Session::new(&mut tape, params, vars, image, rec, false)?;
                if cfg.dropout > 0.0 {
                    session.dropout = Some(Dropout { rate: cfg.dropout, rng: ChaCha8Rng::from_rng(&mut drop_rng) });
                }
                losses.push(caption_cross_entropy(&mut session, caption)?.loss);
            }
            let sum = tape.add_n(&losses)?;
            let loss = tape.scale(sum, T::lit(1.0 / batch.len() as f64))?;
            total += tape.item(sum).as_f64();
            let grads = tape.backward(loss)?;
            let grads = collect_grads(&tape, &grads, &vars.all());
            opt.step(params.params_mut(), &grads, lr);
        }
        let val = validation(params, dataset, recall, cfg)?;
        let val_perplexity = match val {
            Some(_) => Some(perplexity(params, dataset, recall, Split::Val)?),
            None => None,
        };
        let row = EpochLog {
            phase: Phase::Xe,
            epoch,
            loss: total / pairs.len() as f64,
            mean_r_s: None,
            mean_r_s_off: None,
            mean_wr: None,
            val_cider: val.as_ref().map(|r| r.cider_d),
            val_bleu4: val.as_ref().map(|r| r.bleu4),
            val_perplexity,
            lr,
        };
        if cfg.keep_best {
            best.offer(row.val_cider, params);
        }
        on_epoch(&row);
        history.push(row);
    }
    if let Some((_, p)) = best.best {
        *params = p;
    }
    Ok(history)
}

/// Seeded stream for one image's sample in one epoch.
fn stream(seed: u64, epoch: usize, index: usize, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ which.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// CIDEr-D statistics of the training references, used for rewards.
pub fn reward_stats(dataset: &Dataset) -> Result<NgramStats, TrainError> {
    let refs: Vec<Vec<Vec<usize>>> = dataset.split(Split::Train).map(ImageRecord::references).collect();
    Ok(build_df(&refs)?)
}

/// Self-critical training with the combined λ objective, one sample pair per image per epoch.
pub fn train_rl<T: Scalar>(
    params: &mut DecoderParams<T>,
    dataset: &Dataset,
    recall: &RecallCache,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, TrainError> {
    cfg.validate()?;
    let stats = reward_stats(dataset)?;
    let mut images: Vec<(usize, &ImageRecord, &RecalledWordSet, Vec<Vec<usize>>)> = dataset
        .split(Split::Train)
        .enumerate()
        .map(|(i, image)| Ok((i, image, recalled_for(recall, image)?, image.references())))
        .collect::<Result<_, TrainError>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.clip_norm);
    let mut best = BestTracker { best: None };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.at(epoch);
        images.shuffle(&mut rng);
        let (mut total, mut rs, mut rs_off, mut wr) = (0.0, 0.0, 0.0, 0.0);
        for batch in images.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let mut losses = Vec::with_capacity(batch.len());
            for (index, image, rec, refs) in batch {
                let mut full = stream(cfg.seed, epoch, *index, 1);
                let mut off = if cfg.shared_stream { full.clone() } else { stream(cfg.seed, epoch, *index, 2) };
                let mut session = Session::new(&mut tape, params, vars, image, rec, false)?;
                let step = combined_rl_step(&mut session, refs, &stats, cfg.lambda, cfg.max_len, &mut full, &mut off)?;
                losses.push(step.loss);
                rs += step.rewards.r_s;
                rs_off += step.rewards.r_s_off;
                wr += step.rewards.wr;
            }
            let sum = tape.add_n(&losses)?;
            let loss = tape.scale(sum, T::lit(1.0 / batch.len() as f64))?;
            total += tape.item(sum).as_f64();
            let grads = tape.backward(loss)?;
            let grads = collect_grads(&tape, &grads, &vars.all());
            opt.step(params.params_mut(), &grads, lr);
        }
        let n = images.len().max(1) as f64;
        let val = validation(params, dataset, recall, cfg)?;
        let row = EpochLog {
            phase: Phase::Rl,
            epoch,
            loss: total / n,
            mean_r_s: Some(rs / n),
            mean_r_s_off: Some(rs_off / n),
            mean_wr: Some(wr / n),
            val_cider: val.as_ref().map(|r| r.cider_d),
            val_bleu4: val.as_ref().map(|r| r.bleu4),
            val_perplexity: None,
            lr,
        };
        if cfg.keep_best {
            best.offer(row.val_cider, params);
        }
        on_epoch(&row);
        history.push(row);
    }
    if let Some((_, p)) = best.best {
        *params = p;
    }
    Ok(history)
}
