//! Image records, the caption corpus and their JSON Lines files.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vocab::{strip_eos, Vocabulary, EOS};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{}`", other)),
        }
    }
}

/// One image: region features, their mean, and reference captions (each ending in `EOS`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub split: Split,
    pub regions: Vec<Vec<f64>>,
    pub global: Vec<f64>,
    pub captions: Vec<Vec<usize>>,
}

impl ImageRecord {
    /// Builds a record, computing the global feature as the mean of the regions.
    pub fn new(id: String, split: Split, regions: Vec<Vec<f64>>, captions: Vec<Vec<usize>>) -> Result<Self, String> {
        let dim = regions.first().map(Vec::len).ok_or("image has no regions")?;
        if dim == 0 || regions.iter().any(|r| r.len() != dim) {
            return Err("regions must share one nonzero dimension".into());
        }
        if regions.iter().flatten().any(|x| !x.is_finite()) {
            return Err("region features must be finite".into());
        }
        if captions.iter().any(|c| strip_eos(c).is_empty() || c.last() != Some(&EOS)) {
            return Err("every caption needs at least one word and a trailing EOS".into());
        }
        let global = mean_rows(&regions);
        Ok(ImageRecord { id, split, regions, global, captions })
    }

    pub fn feature_dim(&self) -> usize {
        self.global.len()
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn regions_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = self.regions.iter().flatten().map(|&x| T::lit(x)).collect();
        Tensor::from_parts(vec![self.regions.len(), self.feature_dim()], data)
    }

    pub fn global_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(vec![self.feature_dim()], self.global.iter().map(|&x| T::lit(x)).collect())
    }

    /// Reference captions without their `EOS`, as used by the metrics.
    pub fn references(&self) -> Vec<Vec<usize>> {
        self.captions.iter().map(|c| strip_eos(c).to_vec()).collect()
    }
}

pub(crate) fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; rows[0].len()];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    split: Split,
    regions: Vec<Vec<f64>>,
    captions: Vec<Vec<String>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.split == split)
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.images.first().map(ImageRecord::feature_dim)
    }

    pub fn by_id(&self) -> HashMap<&str, &ImageRecord> {
        self.images.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    /// Writes one JSON object per image; the global feature is not stored.
    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.images {
            let line = RecordLine {
                id: r.id.clone(),
                split: r.split,
                regions: r.regions.clone(),
                captions: r.captions.iter().map(|c| vocab.decode(c)).collect(),
            };
            serde_json::to_writer(&mut w, &line).expect("dataset record serializes");
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
        let mut images: Vec<ImageRecord> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| DataError::io(Path::new("<dataset>"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RecordLine =
                serde_json::from_str(&line).map_err(|e| DataError::Parse { line: line_no, message: e.to_string() })?;
            let captions = raw.captions.iter().map(|c| vocab.encode(c)).collect();
            let record = ImageRecord::new(raw.id, raw.split, raw.regions, captions)
                .map_err(|message| DataError::Parse { line: line_no, message })?;
            if let Some(first) = images.first() {
                if first.feature_dim() != record.feature_dim() {
                    return Err(DataError::Parse {
                        line: line_no,
                        message: format!(
                            "feature dimension {} differs from {}",
                            record.feature_dim(),
                            first.feature_dim()
                        ),
                    });
                }
            }
            images.push(record);
        }
        Ok(Dataset { images })
    }
}

/// A caption in the retrieval corpus with the image it was written for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub image_id: String,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    image_id: String,
    tokens: Vec<String>,
}

impl Corpus {
    /// Every caption of every training image, in dataset order.
    pub fn from_training_split(dataset: &Dataset) -> Self {
        let entries = dataset
            .split(Split::Train)
            .flat_map(|r| r.captions.iter().map(|c| CorpusEntry { image_id: r.id.clone(), tokens: c.clone() }))
            .collect();
        Corpus { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            let line = CorpusLine { image_id: e.image_id.clone(), tokens: vocab.decode(&e.tokens) };
            serde_json::to_writer(&mut w, &line).expect("corpus entry serializes");
            w.write_all(b"\n").map_err(|e| DataError::io(path, e))?;
        }
        w.flush().map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DataError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: CorpusLine =
                serde_json::from_str(&line).map_err(|e| DataError::Parse { line: i + 1, message: e.to_string() })?;
            if raw.tokens.is_empty() {
                return Err(DataError::Parse { line: i + 1, message: "empty caption".into() });
            }
            entries.push(CorpusEntry { image_id: raw.image_id, tokens: vocab.encode(&raw.tokens) });
        }
        Ok(Corpus { entries })
    }

    /// Checks that every entry points at an image of `dataset`.
    pub fn validate(&self, dataset: &Dataset) -> Result<(), DataError> {
        let ids = dataset.by_id();
        for (i, e) in self.entries.iter().enumerate() {
            if !ids.contains_key(e.image_id.as_str()) {
                return Err(DataError::Parse {
                    line: i + 1,
                    message: format!("corpus caption refers to unknown image `{}`", e.image_id),
                });
            }
        }
        Ok(())
    }
}
