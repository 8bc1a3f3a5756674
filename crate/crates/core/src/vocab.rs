//! Token vocabulary with fixed reserved ids and the caption tokenizer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::DataError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in order; repeated words are kept once.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        for w in RESERVED.iter().copied().chain(words.iter().map(|w| w.as_ref())) {
            if !v.index.contains_key(w) {
                v.index.insert(w.to_string(), v.tokens.len());
                v.tokens.push(w.to_string());
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    /// Id of `word`, or `UNK`.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], |s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercases, splits on whitespace, strips punctuation, maps unknown words to
    /// `UNK` and appends `EOS`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = text
            .split_whitespace()
            .map(|raw| raw.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
            .filter(|w| !w.is_empty())
            .map(|w| self.id(&w))
            .collect();
        ids.push(EOS);
        ids
    }

    /// Maps words to ids and appends `EOS`.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        let mut ids: Vec<usize> = words.iter().map(|w| self.id(w.as_ref())).collect();
        ids.push(EOS);
        ids
    }

    /// Words of a caption up to (not including) the first `EOS`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().take_while(|&&i| i != EOS).map(|&i| self.token(i).to_string()).collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for t in &self.tokens {
            writeln!(out, "{}", t).expect("write to string");
        }
        std::fs::write(path, out).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let tokens: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(DataError::Parse {
                line: 1,
                message: "vocabulary must start with <pad>, <bos>, <eos>, <unk>".into(),
            });
        }
        let v = Vocabulary::new(&tokens[RESERVED.len()..]);
        if v.len() != tokens.len() {
            return Err(DataError::Parse { line: 1, message: "vocabulary lists a token twice".into() });
        }
        Ok(v)
    }
}

/// Strips everything from the first `EOS` on.
pub fn strip_eos(ids: &[usize]) -> &[usize] {
    let end = ids.iter().position(|&i| i == EOS).unwrap_or(ids.len());
    &ids[..end]
}
