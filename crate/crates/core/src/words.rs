//! Word-level vocabulary over tokenizer output.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SEP: u32 = 4;
pub const COMMA: u32 = 5;

const SPECIALS: [&str; 6] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>", ","];

/// Frequency-cut word vocabulary. Ids 0..6 are reserved for the special
/// tokens; the rest are ordered by descending count, then alphabetically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for WordVocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<WordVocab> for Vec<String> {
    fn from(v: WordVocab) -> Self {
        v.tokens
    }
}

impl WordVocab {
    /// Builds from token sequences. Words seen fewer than `min_count` times
    /// map to `<unk>`, except those listed in `forced`, which are always kept.
    pub fn build<'a, I, F>(seqs: I, min_count: usize, forced: F) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
        F: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in seqs {
            for t in seq {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut keep: BTreeMap<&str, usize> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        for f in forced {
            keep.entry(f).or_insert(0);
        }
        let mut ranked: Vec<(&str, usize)> =
            keep.into_iter().filter(|(t, _)| !SPECIALS.contains(t)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens: Vec<String> =
            SPECIALS.iter().copied().chain(ranked.into_iter().map(|(t, _)| t)).map(String::from).collect();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
