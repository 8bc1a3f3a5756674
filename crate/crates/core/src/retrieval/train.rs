use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::triplet_loss;
use super::model::{embed_image, encode_caption, pool_with_keys, state_keys, RetrievalModel, RetrievalVars};
use super::search::select_top_k;
use crate::data::{Dataset, ImageRecord, Split};
use crate::objectives::optim::{Adam, LrSchedule};
use crate::params::{collect_grads, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorError, Var};
use crate::vocab::strip_eos;

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for RetrievalTrainConfig {
    fn default() -> Self {
        RetrievalTrainConfig {
            epochs: 30,
            batch_size: 32,
            schedule: LrSchedule { base: 2e-3, factor: 0.8, every: 10 },
            clip_norm: Some(5.0),
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalEpoch {
    pub epoch: usize,
    /// Mean summed-triplet loss per batch.
    pub loss: f64,
    pub lr: f64,
    /// Validation R@1 and R@5, when a validation split exists.
    pub val_recall: Option<(f64, f64)>,
}

/// Triplet loss for a batch of matched (image, caption) pairs; captions exclude `EOS`.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &RetrievalVars,
    batch: &[(&ImageRecord, &[usize])],
    margin: f64,
) -> Result<Var, TensorError> {
    let mut captions = Vec::with_capacity(batch.len());
    for (_, tokens) in batch {
        let states = encode_caption(tape, vars, tokens)?;
        let keys = state_keys(tape, vars, states)?;
        captions.push((states, keys));
    }
    let mut rows = Vec::with_capacity(batch.len());
    for (image, _) in batch {
        let global = tape.constant(image.global_tensor());
        let f = embed_image(tape, vars, global)?;
        let f = tape.normalize(f)?;
        let query = tape.matmul(vars.att_image, global)?;
        let pooled = captions
            .iter()
            .map(|&(states, keys)| {
                let g = pool_with_keys(tape, vars, states, keys, query)?;
                tape.normalize(g)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let g = tape.stack(&pooled)?;
        rows.push(tape.matmul(g, f)?);
    }
    let scores = tape.stack(&rows)?;
    triplet_loss(tape, scores, margin)
}

/// Mini-batches for one epoch. Every caption is used once and a batch never holds
/// two captions of the same image.
fn epoch_batches<'a>(
    images: &[&'a ImageRecord],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<(&'a ImageRecord, &'a [usize])>> {
    let rounds = images.iter().map(|r| r.captions.len()).max().unwrap_or(0);
    let perms: Vec<Vec<usize>> = images
        .iter()
        .map(|r| {
            let mut p: Vec<usize> = (0..r.captions.len()).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let mut batches = Vec::new();
    for round in 0..rounds {
        let mut order: Vec<usize> = (0..images.len()).filter(|&i| round < perms[i].len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(batch_size.max(2)) {
            if chunk.len() < 2 {
                continue;
            }
            batches.push(chunk.iter().map(|&i| (images[i], strip_eos(&images[i].captions[perms[i][round]]))).collect());
        }
    }
    batches
}

/// Trains on the training split with Adam, reporting each epoch to `on_epoch`.
pub fn train_retrieval<T: Scalar>(
    model: &mut RetrievalModel<T>,
    dataset: &Dataset,
    config: &RetrievalTrainConfig,
    mut on_epoch: impl FnMut(&RetrievalEpoch),
) -> Result<Vec<RetrievalEpoch>, TensorError> {
    let train: Vec<&ImageRecord> = dataset.split(Split::Train).collect();
    let val: Vec<&ImageRecord> = dataset.split(Split::Val).collect();
    if train.len() < 2 {
        return Err(TensorError::Usage("retrieval training needs at least two training images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(config.clip_norm);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.schedule.at(epoch);
        let batches = epoch_batches(&train, config.batch_size, &mut rng);
        let mut total = 0.0;
        for batch in &batches {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let loss = batch_loss(&mut tape, &vars, batch, model.margin)?;
            total += tape.item(loss).as_f64();
            let grads = tape.backward(loss)?;
            let grads = collect_grads(&tape, &grads, &vars.all());
            opt.step(model.params_mut(), &grads, lr);
        }
        let val_recall = if val.len() >= 2 {
            let r = recall_at_k(model, &val, &[1, 5])?;
            Some((r[0], r[1]))
        } else {
            None
        };
        let record = RetrievalEpoch { epoch, loss: total / batches.len().max(1) as f64, lr, val_recall };
        on_epoch(&record);
        history.push(record);
    }
    Ok(history)
}

/// Image-to-caption R@K: every image queries all captions of `images`, each caption
/// a separate candidate; a hit is any caption of the query image within the top K.
pub fn recall_at_k<T: Scalar>(
    model: &RetrievalModel<T>,
    images: &[&ImageRecord],
    ks: &[usize],
) -> Result<Vec<f64>, TensorError> {
    let mut encoded = Vec::new();
    let mut sources = Vec::new();
    for image in images {
        for c in &image.captions {
            encoded.push(model.encode(strip_eos(c))?);
            sources.push(image.id.as_str());
        }
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let mut hits = vec![0usize; ks.len()];
    for image in images {
        let global: Vec<T> = image.global.iter().map(|&x| T::lit(x)).collect();
        let q = model.query(&global)?;
        let scores = encoded.iter().map(|c| model.score(c, &q).map(Scalar::as_f64)).collect::<Result<Vec<_>, _>>()?;
        let top = select_top_k(&scores, &sources, &image.id, kmax, false);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if top.indices.iter().take(k).any(|&i| sources[i] == image.id) {
                *h += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / images.len().max(1) as f64).collect())
}
