//! Instruction/response records, the tokenizer, JSONL ingestion and splits.
//!
//! Three corpus roles share one record layout family:
//! SFT (`instruction`, `response`), preference (`instruction`, `preferred`,
//! `rejected`) and RL (`instruction`, `golden`). Corpora are immutable once
//! loaded and are shared read-only between workers.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeamError};
use crate::util;

/// Lowercased word / punctuation tokens of a text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits on whitespace, detaches every other non-word character as its own
/// token and lowercases. Pure and total.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if is_word_char(c) {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenSeq { tokens }
}

/// Joins tokens back into a text whose tokenization is the same sequence.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub id: String,
    pub text: String,
    pub tokens: TokenSeq,
}

impl Instruction {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self {
            id: id.into(),
            text,
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub text: String,
    pub tokens: TokenSeq,
}

impl Response {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { text, tokens }
    }

    /// Builds a response from tokens; the text is the space-joined tokens.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        Self::new(detokenize(tokens))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub instruction: Instruction,
    pub golden: Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub instruction: Instruction,
    pub preferred: Response,
    pub rejected: Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RlSample {
    pub instruction: Instruction,
    pub golden: Response,
}

impl RlSample {
    pub fn new(id: impl Into<String>, instruction: &str, golden: &str) -> Self {
        Self {
            instruction: Instruction::new(id, instruction),
            golden: Response::new(golden),
        }
    }

    pub fn id(&self) -> &str {
        &self.instruction.id
    }
}

impl SftExample {
    pub fn new(id: impl Into<String>, instruction: &str, response: &str) -> Self {
        Self {
            instruction: Instruction::new(id, instruction),
            golden: Response::new(response),
        }
    }
}

impl PreferencePair {
    pub fn new(
        id: impl Into<String>,
        instruction: &str,
        preferred: &str,
        rejected: &str,
    ) -> Result<Self> {
        let pair = Self {
            instruction: Instruction::new(id, instruction),
            preferred: Response::new(preferred),
            rejected: Response::new(rejected),
        };
        pair.check()?;
        Ok(pair)
    }

    fn check(&self) -> Result<()> {
        if self.preferred.text == self.rejected.text {
            return Err(SeamError::Data(format!(
                "preference pair `{}` has identical preferred and rejected responses",
                self.instruction.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Sft,
    Preference,
    Rl,
}

impl std::str::FromStr for CorpusKind {
    type Err = SeamError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(Self::Sft),
            "preference" => Ok(Self::Preference),
            "rl" => Ok(Self::Rl),
            other => Err(SeamError::Config(format!("unknown corpus kind `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SftRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    instruction: String,
    response: String,
}

#[derive(Serialize, Deserialize)]
struct PreferenceRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    instruction: String,
    preferred: String,
    rejected: String,
}

#[derive(Serialize, Deserialize)]
struct RlRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    instruction: String,
    golden: String,
}

fn content_id(parts: &[&str]) -> String {
    let bytes: Vec<&[u8]> = parts.iter().map(|p| p.as_bytes()).collect();
    format!("{:016x}", util::fnv1a_parts(&bytes))
}

/// A record type that can live in a JSONL corpus file.
pub trait Record: Clone + Send + Sync {
    const KIND: CorpusKind;
    fn id(&self) -> &str;
    fn to_json_line(&self) -> Result<String>;
    fn from_json_line(line: &str) -> Result<Self>;
}

impl Record for SftExample {
    const KIND: CorpusKind = CorpusKind::Sft;
    fn id(&self) -> &str {
        &self.instruction.id
    }
    fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&SftRow {
            id: Some(self.instruction.id.clone()),
            instruction: self.instruction.text.clone(),
            response: self.golden.text.clone(),
        })?)
    }
    fn from_json_line(line: &str) -> Result<Self> {
        let row: SftRow = serde_json::from_str(line)?;
        let id = row
            .id
            .unwrap_or_else(|| content_id(&[&row.instruction, &row.response]));
        Ok(SftExample::new(id, &row.instruction, &row.response))
    }
}

impl Record for PreferencePair {
    const KIND: CorpusKind = CorpusKind::Preference;
    fn id(&self) -> &str {
        &self.instruction.id
    }
    fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&PreferenceRow {
            id: Some(self.instruction.id.clone()),
            instruction: self.instruction.text.clone(),
            preferred: self.preferred.text.clone(),
            rejected: self.rejected.text.clone(),
        })?)
    }
    fn from_json_line(line: &str) -> Result<Self> {
        let row: PreferenceRow = serde_json::from_str(line)?;
        let id = row
            .id
            .unwrap_or_else(|| content_id(&[&row.instruction, &row.preferred, &row.rejected]));
        PreferencePair::new(id, &row.instruction, &row.preferred, &row.rejected)
    }
}

impl Record for RlSample {
    const KIND: CorpusKind = CorpusKind::Rl;
    fn id(&self) -> &str {
        &self.instruction.id
    }
    fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&RlRow {
            id: Some(self.instruction.id.clone()),
            instruction: self.instruction.text.clone(),
            golden: self.golden.text.clone(),
        })?)
    }
    fn from_json_line(line: &str) -> Result<Self> {
        let row: RlRow = serde_json::from_str(line)?;
        let id = row
            .id
            .unwrap_or_else(|| content_id(&[&row.instruction, &row.golden]));
        Ok(RlSample::new(id, &row.instruction, &row.golden))
    }
}

/// An ordered, id-unique collection of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    records: Vec<T>,
}

pub type SftCorpus = Corpus<SftExample>;
pub type PreferenceCorpus = Corpus<PreferencePair>;
pub type RlCorpus = Corpus<RlSample>;

impl<T: Record> Corpus<T> {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(records: Vec<T>) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if let Some(first) = seen.insert(r.id(), i) {
                return Err(SeamError::DuplicateId {
                    id: r.id().to_string(),
                    first_line: first + 1,
                    second_line: i + 1,
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[T] {
        &self.records
    }

    pub fn into_records(self) -> Vec<T> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&T> {
        self.records.iter().find(|r| r.id() == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id().to_string()).collect()
    }

    /// Keeps records whose id satisfies `keep`, preserving order.
    pub fn retain_ids(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self {
            records: self
                .records
                .iter()
                .filter(|r| keep(r.id()))
                .cloned()
                .collect(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line()?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Hex SHA-256 of the serialized records.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(util::sha256_hex(self.to_jsonl()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    /// Parses JSONL text. `origin` is used in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut lines_of: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec = T::from_json_line(line).map_err(|e| SeamError::Parse {
                path: origin.to_string(),
                line: lineno,
                message: e.to_string(),
            })?;
            if let Some(first) = lines_of.insert(rec.id().to_string(), lineno) {
                return Err(SeamError::DuplicateId {
                    id: rec.id().to_string(),
                    first_line: first,
                    second_line: lineno,
                });
            }
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SeamError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Deterministic three-way partition. Each split keeps the original record
    /// order; split sizes use largest-remainder rounding so each differs from
    /// `ratio * len` by less than one.
    pub fn split(&self, ratios: (f64, f64, f64), seed: u64) -> Result<(Self, Self, Self)> {
        let r = [ratios.0, ratios.1, ratios.2];
        if r.iter().any(|x| !(x.is_finite() && *x > 0.0))
            || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(SeamError::Config(format!(
                "split ratios must be positive and sum to 1, got {ratios:?}"
            )));
        }
        let n = self.records.len();
        let exact: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut rest = n - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &k in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            sizes[k] += 1;
            rest -= 1;
        }

        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assign = vec![0u8; n];
        for (pos, &i) in idx.iter().enumerate() {
            assign[i] = if pos < sizes[0] {
                0
            } else if pos < sizes[0] + sizes[1] {
                1
            } else {
                2
            };
        }
        let pick = |which: u8| Self {
            records: self
                .records
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == which)
                .map(|(r, _)| r.clone())
                .collect(),
        };
        Ok((pick(0), pick(1), pick(2)))
    }
}

/// A corpus of any of the three kinds, as returned by [`load_corpus`].
#[derive(Debug, Clone)]
pub enum AnyCorpus {
    Sft(SftCorpus),
    Preference(PreferenceCorpus),
    Rl(RlCorpus),
}

impl AnyCorpus {
    pub fn len(&self) -> usize {
        match self {
            AnyCorpus::Sft(c) => c.len(),
            AnyCorpus::Preference(c) => c.len(),
            AnyCorpus::Rl(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_corpus(path: &Path, kind: CorpusKind) -> Result<AnyCorpus> {
    Ok(match kind {
        CorpusKind::Sft => AnyCorpus::Sft(Corpus::load(path)?),
        CorpusKind::Preference => AnyCorpus::Preference(Corpus::load(path)?),
        CorpusKind::Rl => AnyCorpus::Rl(Corpus::load(path)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).tokens
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(toks("Hello, world"), ["hello", ",", "world"]);
        assert_eq!(tokenize("").len(), 0);
        assert_eq!(toks("A  B"), ["a", "b"]);
        assert_eq!(toks("don't stop!"), ["don", "'", "t", "stop", "!"]);
        assert_eq!(toks("ÉTÉ été"), ["été", "été"]);
    }

    #[test]
    fn detokenize_round_trips_tokens() {
        let t = toks("What's up, doc? (ok)");
        assert_eq!(tokenize(&detokenize(&t)).tokens, t);
    }

    fn rl_text(n: usize) -> String {
        (0..n)
            .map(|i| {
                format!("{{\"id\":\"s{i}\",\"instruction\":\"q {i}\",\"golden\":\"a {i}\"}}\n")
            })
            .collect()
    }

    #[test]
    fn parse_valid_rl() {
        let c = RlCorpus::parse(&rl_text(2), "mem").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.records()[1].golden.tokens.tokens, ["a", "1"]);
    }

    #[test]
    fn duplicate_id_cites_both_lines() {
        let mut lines: Vec<String> = rl_text(8).lines().map(String::from).collect();
        lines[6] = lines[2].replace("q 2", "q other");
        let err = RlCorpus::parse(&lines.join("\n"), "mem").unwrap_err();
        match err {
            SeamError::DuplicateId {
                id,
                first_line,
                second_line,
            } => {
                assert_eq!(id, "s2");
                assert_eq!((first_line, second_line), (3, 7));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn identical_preference_is_rejected() {
        let line = r#"{"id":"p","instruction":"i","preferred":"x y","rejected":"x y"}"#;
        let err = PreferenceCorpus::parse(line, "mem").unwrap_err();
        assert!(matches!(err, SeamError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_and_wrong_kind_lines_name_line_number() {
        let text = format!("{}not json\n", rl_text(1));
        assert!(matches!(
            RlCorpus::parse(&text, "mem").unwrap_err(),
            SeamError::Parse { line: 2, .. }
        ));
        let sft = r#"{"id":"a","instruction":"i","response":"r"}"#;
        assert!(matches!(
            RlCorpus::parse(sft, "mem").unwrap_err(),
            SeamError::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn missing_id_gets_content_hash() {
        let line = r#"{"instruction":"i","golden":"g"}"#;
        let a = RlCorpus::parse(line, "m").unwrap();
        let b = RlCorpus::parse(line, "m").unwrap();
        assert_eq!(a.records()[0].id(), b.records()[0].id());
        assert_eq!(a.records()[0].id().len(), 16);
    }

    #[test]
    fn split_examples() {
        let c = RlCorpus::parse(&rl_text(10), "m").unwrap();
        let (a, b, d) = c.split((0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.len(), b.len(), d.len()), (8, 1, 1));
        let again = c.split((0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(again, (a, b, d));
        assert!(c.split((0.5, 0.5, 0.5), 7).is_err());
    }

    #[test]
    fn load_corpus_dispatches_on_kind() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rl.jsonl");
        std::fs::write(&p, rl_text(3)).unwrap();
        assert!(
            matches!(load_corpus(&p, CorpusKind::Rl).unwrap(), AnyCorpus::Rl(c) if c.len() == 3)
        );
        assert!(load_corpus(&p, CorpusKind::Sft).is_err());
    }
}
