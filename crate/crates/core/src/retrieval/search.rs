use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncodedCaption, RetrievalModel};
use crate::data::{Corpus, DataError, Dataset, ImageRecord};
use crate::scalar::Scalar;
use crate::tensor::TensorError;
use crate::vocab::{strip_eos, Vocabulary};

pub const DEFAULT_K: usize = 5;

/// The selected corpus entries, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    /// Fewer than `k` entries were eligible.
    pub short: bool,
}

/// Picks the `k` highest scores, skipping entries from `query` when `exclude_own`
/// is set. Equal scores are ordered by index.
pub fn select_top_k(scores: &[f64], sources: &[&str], query: &str, k: usize, exclude_own: bool) -> TopK {
    assert_eq!(scores.len(), sources.len(), "one source per score");
    let mut eligible: Vec<usize> = (0..scores.len()).filter(|&i| !(exclude_own && sources[i] == query)).collect();
    let short = eligible.len() < k;
    eligible.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    eligible.truncate(k);
    let picked = eligible.iter().map(|&i| scores[i]).collect();
    TopK { indices: eligible, scores: picked, short }
}

/// Corpus captions encoded once by a frozen model.
pub struct CorpusIndex<'a, T> {
    pub corpus: &'a Corpus,
    pub encoded: Vec<EncodedCaption<T>>,
}

impl<'a, T: Scalar> CorpusIndex<'a, T> {
    pub fn build(model: &RetrievalModel<T>, corpus: &'a Corpus) -> Result<Self, TensorError> {
        let encoded =
            corpus.entries.iter().map(|e| model.encode(strip_eos(&e.tokens))).collect::<Result<Vec<_>, _>>()?;
        Ok(CorpusIndex { corpus, encoded })
    }

    /// Similarity of `image` to every corpus caption, in corpus order.
    pub fn scores(&self, model: &RetrievalModel<T>, image: &ImageRecord) -> Result<Vec<f64>, TensorError> {
        let global: Vec<T> = image.global.iter().map(|&x| T::lit(x)).collect();
        let q = model.query(&global)?;
        self.encoded.iter().map(|c| model.score(c, &q).map(Scalar::as_f64)).collect()
    }
}

pub fn retrieve_top_k<T: Scalar>(
    model: &RetrievalModel<T>,
    index: &CorpusIndex<'_, T>,
    image: &ImageRecord,
    k: usize,
    exclude_own: bool,
) -> Result<TopK, TensorError> {
    if index.corpus.is_empty() {
        return Err(TensorError::Usage("retrieval corpus is empty".into()));
    }
    let scores = index.scores(model, image)?;
    let sources: Vec<&str> = index.corpus.entries.iter().map(|e| e.image_id.as_str()).collect();
    Ok(select_top_k(&scores, &sources, &image.id, k, exclude_own))
}

/// Distinct non-reserved word ids `W_r` harvested from retrieved captions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecalledWordSet {
    words: Vec<usize>,
    source_captions: Vec<usize>,
}

impl RecalledWordSet {
    pub fn new(words: Vec<usize>, source_captions: Vec<usize>) -> Result<Self, String> {
        let mut seen = HashSet::new();
        for &w in &words {
            if Vocabulary::is_reserved(w) {
                return Err(format!("reserved id {} in recalled words", w));
            }
            if !seen.insert(w) {
                return Err(format!("duplicate id {} in recalled words", w));
            }
        }
        Ok(RecalledWordSet { words, source_captions })
    }

    pub fn empty() -> Self {
        RecalledWordSet::default()
    }

    pub fn words(&self) -> &[usize] {
        &self.words
    }

    pub fn source_captions(&self) -> &[usize] {
        &self.source_captions
    }

    /// `m`, the number of recalled words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.words.contains(&id)
    }
}

/// Union of the caption tokens in first-occurrence order, without reserved ids
/// or (optionally) stopwords.
pub fn build_recalled_words(
    captions: &[&[usize]],
    source_captions: &[usize],
    stopwords: Option<&HashSet<usize>>,
) -> RecalledWordSet {
    let mut seen = HashSet::new();
    let mut words = Vec::new();
    for &w in captions.iter().flat_map(|c| c.iter()) {
        if Vocabulary::is_reserved(w) || stopwords.is_some_and(|s| s.contains(&w)) {
            continue;
        }
        if seen.insert(w) {
            words.push(w);
        }
    }
    RecalledWordSet::new(words, source_captions.to_vec()).expect("union is duplicate free")
}

/// Recalled words for every image, keyed by image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecallCache {
    entries: Vec<(String, RecalledWordSet)>,
    lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RecallLine {
    image_id: String,
    words: Vec<String>,
    source_captions: Vec<usize>,
}

impl RecallCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: String, set: RecalledWordSet) {
        match self.lookup.get(&image_id) {
            Some(&i) => self.entries[i].1 = set,
            None => {
                self.lookup.insert(image_id.clone(), self.entries.len());
                self.entries.push((image_id, set));
            }
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&RecalledWordSet> {
        self.lookup.get(image_id).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RecalledWordSet)> {
        self.entries.iter().map(|(id, s)| (id.as_str(), s))
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, set) in &self.entries {
            let line = RecallLine {
                image_id: id.clone(),
                words: set.words.iter().map(|&i| vocab.token(i).to_string()).collect(),
                source_captions: set.source_captions.clone(),
            };
            serde_json::to_writer(&mut w, &line).expect("recall entry serializes");
            w.write_all(b"\n").map_err(|e| DataError::io(path, e))?;
        }
        w.flush().map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        Self::read(BufReader::new(file), vocab).map_err(|e| match e {
            DataError::Io { source, .. } => DataError::io(path, source),
            other => other,
        })
    }

    pub fn read<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<Self, DataError> {
        let mut cache = RecallCache::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| DataError::io(Path::new("<recall cache>"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |message: String| DataError::Parse { line: i + 1, message };
            let raw: RecallLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let words = raw
                .words
                .iter()
                .map(|w| vocab.get(w).ok_or_else(|| parse(format!("recalled word `{}` is not in the vocabulary", w))))
                .collect::<Result<Vec<_>, _>>()?;
            let set = RecalledWordSet::new(words, raw.source_captions).map_err(parse)?;
            cache.insert(raw.image_id, set);
        }
        Ok(cache)
    }
}

/// Outcome of recalling words for a whole dataset.
pub struct RecallSummary {
    pub cache: RecallCache,
    /// Images that had fewer than `k` eligible captions.
    pub short: usize,
}

/// Retrieves the top `k` corpus captions for every image and collects their words.
pub fn build_recall_cache<T: Scalar>(
    model: &RetrievalModel<T>,
    dataset: &Dataset,
    corpus: &Corpus,
    k: usize,
    exclude_own: bool,
    stopwords: Option<&HashSet<usize>>,
) -> Result<RecallSummary, TensorError> {
    let index = CorpusIndex::build(model, corpus)?;
    let mut cache = RecallCache::new();
    let mut short = 0;
    for image in &dataset.images {
        let top = retrieve_top_k(model, &index, image, k, exclude_own)?;
        if top.short {
            short += 1;
            log::warn!("image {}: only {} eligible captions for k = {}", image.id, top.indices.len(), k);
        }
        let caps: Vec<&[usize]> = top.indices.iter().map(|&i| strip_eos(&corpus.entries[i].tokens)).collect();
        cache.insert(image.id.clone(), build_recalled_words(&caps, &top.indices, stopwords));
    }
    Ok(RecallSummary { cache, short })
}
