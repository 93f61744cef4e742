//! Synonym candidate sources for the substitution attack.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeamError};
use crate::models::{cosine, embed, EmbeddingBackend};
use crate::par;
use crate::util;

pub trait SynonymSource: Send + Sync {
    /// Candidate replacements for `word`, best first, never containing `word`.
    fn synonyms(&self, word: &str) -> Vec<String>;
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconRow {
    word: String,
    synonyms: Vec<String>,
}

/// Word → synonyms table, usually loaded from JSONL.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: impl Into<String>, synonyms: Vec<String>) {
        let word = word.into();
        let mut syn: Vec<String> = Vec::with_capacity(synonyms.len());
        for s in synonyms {
            if s != word && !syn.contains(&s) {
                syn.push(s);
            }
        }
        self.entries.insert(word, syn);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: LexiconRow = serde_json::from_str(line).map_err(|e| SeamError::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            lex.insert(row.word, row.synonyms);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SeamError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut words: Vec<&String> = self.entries.keys().collect();
        words.sort();
        let mut out = String::new();
        for w in words {
            out.push_str(&serde_json::to_string(&LexiconRow {
                word: w.clone(),
                synonyms: self.entries[w].clone(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

impl SynonymSource for Lexicon {
    fn synonyms(&self, word: &str) -> Vec<String> {
        self.entries.get(word).cloned().unwrap_or_default()
    }

    fn fingerprint(&self) -> String {
        let body = self.to_jsonl().unwrap_or_default();
        format!("lexicon:{}", &util::sha256_hex(body.as_bytes())[..16])
    }
}

/// Nearest neighbors of each word within a fixed vocabulary.
pub struct EmbeddingNeighbors {
    neighbors: HashMap<String, Vec<String>>,
    fingerprint: String,
}

impl EmbeddingNeighbors {
    pub const DEFAULT_TOP: usize = 5;
    pub const DEFAULT_MIN_COSINE: f64 = 0.5;

    /// Precomputes the `top` most similar vocabulary words (cosine ≥
    /// `min_cosine`, ties by vocabulary order) for every word in `vocab`.
    pub fn build(
        vocab: &[String],
        embedding: &dyn EmbeddingBackend,
        top: usize,
        min_cosine: f64,
        concurrency: usize,
    ) -> Result<Self> {
        let mut words: Vec<String> = vocab.to_vec();
        words.sort();
        words.dedup();
        let vecs = par::map_ordered(&words, concurrency, |_, w| embed(embedding, w))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let nonzero: Vec<bool> = vecs.iter().map(|v| v.iter().any(|x| *x != 0.0)).collect();
        let lists = par::map_range(words.len(), concurrency, |i| -> Result<Vec<String>> {
            if !nonzero[i] {
                return Ok(Vec::new());
            }
            let mut sims = Vec::new();
            for j in 0..words.len() {
                if j == i || !nonzero[j] {
                    continue;
                }
                let s = cosine(&vecs[i], &vecs[j])?;
                if s >= min_cosine {
                    sims.push((j, s));
                }
            }
            sims.sort_by(|a, b| b.1.total_cmp(&a.1));
            Ok(sims
                .into_iter()
                .take(top)
                .map(|(j, _)| words[j].clone())
                .collect())
        });
        let mut neighbors = HashMap::with_capacity(words.len());
        for (w, l) in words.iter().zip(lists) {
            neighbors.insert(w.clone(), l?);
        }
        let fingerprint = format!(
            "embedding-neighbors:{}:{top}:{min_cosine}:{:016x}",
            embedding.fingerprint(),
            util::fnv1a(words.join("\n").as_bytes())
        );
        Ok(Self {
            neighbors,
            fingerprint,
        })
    }
}

impl SynonymSource for EmbeddingNeighbors {
    fn synonyms(&self, word: &str) -> Vec<String> {
        self.neighbors.get(word).cloned().unwrap_or_default()
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}
