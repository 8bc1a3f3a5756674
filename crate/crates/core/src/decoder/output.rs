use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::search::Decoded;
use crate::data::DataError;
use crate::vocab::{strip_eos, Vocabulary};

/// One line of a decoding output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: Vec<String>,
    pub logprob: f64,
    pub switch_trace: Vec<f64>,
    pub copy_trace: Vec<Vec<f64>>,
}

impl CaptionRecord {
    /// Drops `EOS` from the caption; traces are kept only when `traces` is set.
    pub fn new(image_id: &str, decoded: &Decoded, vocab: &Vocabulary, traces: bool) -> Self {
        CaptionRecord {
            image_id: image_id.to_string(),
            caption: strip_eos(&decoded.tokens).iter().map(|&w| vocab.token(w).to_string()).collect(),
            logprob: decoded.logprob,
            switch_trace: if traces { decoded.switch_trace.clone() } else { Vec::new() },
            copy_trace: if traces { decoded.copy_trace.clone() } else { Vec::new() },
        }
    }
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("caption record serializes");
        w.write_all(b"\n").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}
