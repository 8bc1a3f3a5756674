use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Cli, CliError, Command, Settings};
use crate::data::{Corpus, Dataset, ImageRecord, Split};
use crate::decoder::{read_captions, write_captions, CaptionRecord, DecoderParams, Strategy};
use crate::metrics::{evaluate, EvaluationReport};
use crate::objectives::{
    decode_split, perplexity, score_captions, train_rl, train_xe, write_training_log, EpochLog, Phase,
};
use crate::retrieval::{build_recall_cache, train_retrieval, RecallCache, RetrievalEpoch, RetrievalModel};
use crate::synth::generate;
use crate::tensor::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::vocab::Vocabulary;

/// Default artifact names inside the work directory.
struct Files {
    dir: PathBuf,
}

impl Files {
    fn at(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn or(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        match given {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.dir.join(p),
            None => self.at(name),
        }
    }
}

const VOCAB: &str = "vocab.txt";
const DATASET: &str = "dataset.jsonl";
const CORPUS: &str = "corpus.jsonl";
const RETRIEVAL: &str = "retrieval.ckpt";
const RETRIEVAL_LOG: &str = "retrieval_log.csv";
const RECALL: &str = "recall.jsonl";
const CAPTION_XE: &str = "caption_xe.ckpt";
const CAPTION_RL: &str = "caption_rl.ckpt";
const CAPTIONS: &str = "captions.jsonl";
const REPORT: &str = "report.json";

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

struct Inputs {
    vocab: Vocabulary,
    dataset: Dataset,
}

fn load_inputs(files: &Files) -> Result<Inputs, CliError> {
    let vocab_path = files.at(VOCAB);
    let dataset_path = files.at(DATASET);
    require(&vocab_path)?;
    require(&dataset_path)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let dataset = Dataset::load(&dataset_path, &vocab)?;
    Ok(Inputs { vocab, dataset })
}

fn load_recall(files: &Files, vocab: &Vocabulary) -> Result<RecallCache, CliError> {
    let path = files.at(RECALL);
    require(&path)?;
    Ok(RecallCache::load(&path, vocab)?)
}

fn read_ckpt(path: &Path) -> Result<Checkpoint, CliError> {
    require(path)?;
    read_checkpoint(path).map_err(|e| CliError::checkpoint(path, e))
}

fn save_ckpt(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    write_checkpoint(path, ck).map_err(|e| runtime(format!("{}: {}", path.display(), e)))
}

/// Loads a caption checkpoint and checks it against the data it will decode.
fn load_decoder(path: &Path, inputs: &Inputs) -> Result<DecoderParams<f64>, CliError> {
    let params = DecoderParams::from_checkpoint(&read_ckpt(path)?).map_err(|e| CliError::checkpoint(path, e))?;
    let mismatch = |what: &str, a: usize, b: usize| CliError::Checkpoint {
        path: path.to_path_buf(),
        reason: format!("{} {} does not match the data ({})", what, a, b),
    };
    if params.dims.vocab_size != inputs.vocab.len() {
        return Err(mismatch("vocabulary size", params.dims.vocab_size, inputs.vocab.len()));
    }
    if let Some(d) = inputs.dataset.feature_dim() {
        if params.dims.feature_dim != d {
            return Err(mismatch("feature dimension", params.dims.feature_dim, d));
        }
    }
    Ok(params)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    std::fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {}", path.display(), e)))
}

fn feature_dim(dataset: &Dataset) -> Result<usize, CliError> {
    dataset.feature_dim().ok_or_else(|| CliError::Usage("dataset has no images".into()))
}

fn strategy(beam: usize) -> Result<Strategy, CliError> {
    match beam {
        0 => Err(CliError::Usage("beam size must be at least 1".into())),
        1 => Ok(Strategy::Greedy),
        b => Ok(Strategy::Beam(b)),
    }
}

pub(super) fn execute(cli: &Cli, s: &Settings) -> Result<(), CliError> {
    let files = Files { dir: cli.workdir.clone() };
    match &cli.command {
        Command::Synth { .. } => synth(&files, s),
        Command::TrainRetrieval { .. } => retrieval(&files, s),
        Command::BuildRecall { .. } => recall(&files, s),
        Command::TrainCaption { output, .. } => caption_xe(&files, s, &files.or(output, CAPTION_XE)),
        Command::OptimizeCider { input, output, .. } => {
            caption_rl(&files, s, &files.or(input, CAPTION_XE), &files.or(output, CAPTION_RL))
        }
        Command::Generate { split, checkpoint, output, dump_traces, .. } => generate_captions(
            &files,
            s,
            *split,
            &files.or(checkpoint, CAPTION_RL),
            &files.or(output, CAPTIONS),
            *dump_traces,
        ),
        Command::Evaluate { captions, checkpoint, split, output, .. } => {
            let captions = captions.as_ref().map(|c| files.or(&Some(c.clone()), CAPTIONS));
            evaluate_split(&files, s, *split, captions, &files.or(checkpoint, CAPTION_RL), &files.or(output, REPORT))
        }
    }
}

fn synth(files: &Files, s: &Settings) -> Result<(), CliError> {
    let (dataset, corpus, vocab) = generate(&s.synthetic_spec())?;
    std::fs::create_dir_all(&files.dir).map_err(|e| CliError::Usage(format!("{}: {}", files.dir.display(), e)))?;
    vocab.save(&files.at(VOCAB))?;
    dataset.save(&files.at(DATASET), &vocab)?;
    corpus.save(&files.at(CORPUS), &vocab)?;
    let count = |split| dataset.split(split).count();
    println!(
        "images {} (train {}, val {}, test {}), corpus {} captions, vocabulary {}",
        dataset.images.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        corpus.len(),
        vocab.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct RetrievalRow {
    epoch: usize,
    loss: f64,
    lr: f64,
    val_r1: Option<f64>,
    val_r5: Option<f64>,
}

fn retrieval(files: &Files, s: &Settings) -> Result<(), CliError> {
    let inputs = load_inputs(files)?;
    let dims = s.retrieval_dims(feature_dim(&inputs.dataset)?, inputs.vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut model = RetrievalModel::<f64>::new(dims, s.margin, &mut rng).map_err(|e| CliError::Usage(e.to_string()))?;
    let log = train_retrieval(&mut model, &inputs.dataset, &s.retrieval_train(), |e: &RetrievalEpoch| {
        log::info!("retrieval epoch {} loss {:.4} lr {:.2e} val {:?}", e.epoch, e.loss, e.lr, e.val_recall)
    })?;
    save_ckpt(&files.at(RETRIEVAL), &model.to_checkpoint())?;
    let rows: Vec<RetrievalRow> = log
        .iter()
        .map(|e| RetrievalRow {
            epoch: e.epoch,
            loss: e.loss,
            lr: e.lr,
            val_r1: e.val_recall.map(|r| r.0),
            val_r5: e.val_recall.map(|r| r.1),
        })
        .collect();
    write_csv(&files.at(RETRIEVAL_LOG), &rows)?;
    match log.last().and_then(|e| e.val_recall) {
        Some((r1, r5)) => println!("retrieval trained: val R@1 {:.3}, R@5 {:.3}", r1, r5),
        None => println!("retrieval trained (no validation split)"),
    }
    Ok(())
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(format!("{}: {}", path.display(), e)))?;
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(|e| runtime(format!("{}: {}", path.display(), e)))
}

fn recall(files: &Files, s: &Settings) -> Result<(), CliError> {
    let inputs = load_inputs(files)?;
    let corpus_path = files.at(CORPUS);
    require(&corpus_path)?;
    let corpus = Corpus::load(&corpus_path, &inputs.vocab)?;
    let ckpt_path = files.at(RETRIEVAL);
    let model = RetrievalModel::<f64>::from_checkpoint(&read_ckpt(&ckpt_path)?)
        .map_err(|e| CliError::checkpoint(&ckpt_path, e))?;
    if model.dims.vocab_size != inputs.vocab.len() || Some(model.dims.feature_dim) != inputs.dataset.feature_dim() {
        return Err(CliError::Checkpoint {
            path: ckpt_path,
            reason: "model dimensions do not match the dataset".into(),
        });
    }
    if s.k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let summary = build_recall_cache(&model, &inputs.dataset, &corpus, s.k, s.exclude_own, None)?;
    summary.cache.save(&files.at(RECALL), &inputs.vocab)?;
    let words: usize = summary.cache.iter().map(|(_, w)| w.len()).sum();
    println!(
        "recalled words for {} images (K = {}, mean {:.1} words, {} short of K)",
        summary.cache.len(),
        s.k,
        words as f64 / summary.cache.len().max(1) as f64,
        summary.short
    );
    Ok(())
}

fn epoch_logger(phase: &'static str) -> impl FnMut(&EpochLog) {
    move |r: &EpochLog| {
        log::info!(
            "{} epoch {} loss {:.4} val CIDEr-D {:?} ppl {:?} lr {:.2e}",
            phase,
            r.epoch,
            r.loss,
            r.val_cider,
            r.val_perplexity,
            r.lr
        )
    }
}

fn caption_xe(files: &Files, s: &Settings, output: &Path) -> Result<(), CliError> {
    let inputs = load_inputs(files)?;
    let recall = load_recall(files, &inputs.vocab)?;
    let dims = s.decoder_dims(feature_dim(&inputs.dataset)?, inputs.vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut params = DecoderParams::<f64>::new(dims, s.copy, &mut rng).map_err(|e| CliError::Usage(e.to_string()))?;
    let log = train_xe(&mut params, &inputs.dataset, &recall, &s.train_config(Phase::Xe), epoch_logger("xe"))?;
    save_ckpt(output, &params.to_checkpoint())?;
    write_training_log(&output.with_extension("csv"), &log)?;
    let has_val = inputs.dataset.split(Split::Val).next().is_some();
    if has_val {
        let ppl = perplexity(&params, &inputs.dataset, &recall, Split::Val)?;
        let best = log.iter().filter_map(|r| r.val_cider).fold(f64::NEG_INFINITY, f64::max);
        println!("caption model trained: val perplexity {:.3}, best val CIDEr-D {:.3}", ppl, best);
    } else {
        println!("caption model trained");
    }
    Ok(())
}

fn caption_rl(files: &Files, s: &Settings, input: &Path, output: &Path) -> Result<(), CliError> {
    let inputs = load_inputs(files)?;
    let recall = load_recall(files, &inputs.vocab)?;
    let mut params = load_decoder(input, &inputs)?;
    let log = train_rl(&mut params, &inputs.dataset, &recall, &s.train_config(Phase::Rl), epoch_logger("rl"))?;
    save_ckpt(output, &params.to_checkpoint())?;
    write_training_log(&output.with_extension("csv"), &log)?;
    if let Some(last) = log.last() {
        println!(
            "CIDEr optimization done: mean sample reward {:.3}, recalled-word reward {:.3}",
            last.mean_r_s.unwrap_or(0.0),
            last.mean_wr.unwrap_or(0.0)
        );
    }
    Ok(())
}

fn generate_captions(
    files: &Files,
    s: &Settings,
    split: Split,
    checkpoint: &Path,
    output: &Path,
    traces: bool,
) -> Result<(), CliError> {
    let inputs = load_inputs(files)?;
    let recall = load_recall(files, &inputs.vocab)?;
    let params = load_decoder(checkpoint, &inputs)?;
    let decoded = decode_split(&params, &inputs.dataset, &recall, split, strategy(s.beam)?, s.max_len)?;
    let records: Vec<CaptionRecord> =
        decoded.iter().map(|(img, d)| CaptionRecord::new(&img.id, d, &inputs.vocab, traces)).collect();
    write_captions(output, &records)?;
    println!("wrote {} captions for split {} to {}", records.len(), split, output.display());
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    split: Split,
    source: String,
    #[serde(flatten)]
    report: &'a EvaluationReport,
}

fn evaluate_split(
    files: &Files,
    s: &Settings,
    split: Split,
    captions: Option<PathBuf>,
    checkpoint: &Path,
    output: &Path,
) -> Result<(), CliError> {
    let inputs = load_inputs(files)?;
    let (report, source) = match captions {
        Some(path) => {
            require(&path)?;
            let records = read_captions(&path)?;
            let by_id: HashMap<&str, &ImageRecord> = inputs.dataset.by_id();
            let mut cands = Vec::with_capacity(records.len());
            let mut refs = Vec::with_capacity(records.len());
            for r in &records {
                let image = by_id
                    .get(r.image_id.as_str())
                    .ok_or_else(|| CliError::Usage(format!("caption for unknown image `{}`", r.image_id)))?;
                cands.push(inputs.vocab.encode(&r.caption));
                refs.push(image.references());
            }
            (evaluate(&cands, &refs)?, path.display().to_string())
        }
        None => {
            let recall = load_recall(files, &inputs.vocab)?;
            let params = load_decoder(checkpoint, &inputs)?;
            let decoded = decode_split(&params, &inputs.dataset, &recall, split, strategy(s.beam)?, s.max_len)?;
            (score_captions(&decoded)?, checkpoint.display().to_string())
        }
    };
    write_json(output, &ReportFile { split, source, report: &report })?;
    println!(
        "{} images: BLEU-1 {:.4} BLEU-4 {:.4} ROUGE-L {:.4} CIDEr-D {:.4}",
        report.n_images, report.bleu1, report.bleu4, report.rouge_l, report.cider_d
    );
    Ok(())
}
