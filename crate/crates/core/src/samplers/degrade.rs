//! Degraded probes: worse rewrites of the golden response.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Distinct, Probe, ProbeSet, Provenance, Variant, DEFAULT_PROBES};
use crate::corpus::{Response, RlSample};
use crate::error::{Result, SeamError};
use crate::models::RemoteGenerator;
use crate::util;

/// Per-token removal probability of [`DegradeOp::Dropout`].
pub const DROPOUT_P: f64 = 0.15;
/// Longest span copied by [`DegradeOp::Repeat`].
pub const MAX_REPEAT_SPAN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradeOp {
    Truncate,
    Shuffle,
    Splice,
    Dropout,
    Repeat,
}

impl DegradeOp {
    pub const CYCLE: [DegradeOp; 5] = [
        DegradeOp::Truncate,
        DegradeOp::Shuffle,
        DegradeOp::Splice,
        DegradeOp::Dropout,
        DegradeOp::Repeat,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DegradeOp::Truncate => "truncate",
            DegradeOp::Shuffle => "shuffle",
            DegradeOp::Splice => "splice",
            DegradeOp::Dropout => "dropout",
            DegradeOp::Repeat => "repeat",
        }
    }

    /// Applies the operator. `pool` supplies splice donors. Returns `None`
    /// when the operator cannot produce a nonempty output.
    pub fn apply(&self, tokens: &[String], seed: u64, pool: &[Response]) -> Option<Vec<String>> {
        if tokens.is_empty() {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = tokens.len().div_ceil(2);
        let out = match self {
            DegradeOp::Truncate => tokens[..half].to_vec(),
            DegradeOp::Shuffle => shuffle(tokens, &mut rng),
            DegradeOp::Splice => {
                let donors: Vec<&Response> =
                    pool.iter().filter(|r| r.tokens.tokens != tokens).collect();
                let donor = donors.get(rng.gen_range(0..donors.len().max(1)))?;
                let d = &donor.tokens.tokens;
                let mut out = tokens[..half].to_vec();
                out.extend_from_slice(&d[d.len() / 2..]);
                out
            }
            DegradeOp::Dropout => tokens
                .iter()
                .filter(|_| !rng.gen_bool(DROPOUT_P))
                .cloned()
                .collect(),
            DegradeOp::Repeat => {
                let start = rng.gen_range(0..tokens.len());
                let len = rng.gen_range(1..=MAX_REPEAT_SPAN.min(tokens.len() - start));
                let mut out = tokens[..start + len].to_vec();
                out.extend_from_slice(&tokens[start..]);
                out
            }
        };
        (!out.is_empty()).then_some(out)
    }
}

fn is_sentence_end(t: &str) -> bool {
    matches!(t, "." | "!" | "?")
}

/// Permutes sentences when there are at least two, otherwise swaps one
/// adjacent token pair.
fn shuffle(tokens: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut sentences: Vec<&[String]> = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if is_sentence_end(t) {
            sentences.push(&tokens[start..=i]);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        sentences.push(&tokens[start..]);
    }
    if sentences.len() >= 2 {
        let original = sentences.clone();
        sentences.shuffle(rng);
        if sentences == original {
            sentences.rotate_left(1);
        }
        return sentences.concat();
    }
    let mut out = tokens.to_vec();
    if out.len() >= 2 {
        let i = rng.gen_range(0..out.len() - 1);
        out.swap(i, i + 1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeConfig {
    pub n: usize,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self { n: DEFAULT_PROBES }
    }
}

/// Source of degraded responses.
pub enum DegradeGenerator<'a> {
    /// Rule-based operators; `pool` supplies splice donors.
    Local {
        pool: &'a [Response],
    },
    Remote(&'a RemoteGenerator),
}

impl DegradeGenerator<'_> {
    pub fn fingerprint(&self) -> String {
        match self {
            DegradeGenerator::Local { pool } => {
                let texts: Vec<&str> = pool.iter().map(|r| r.text.as_str()).collect();
                format!(
                    "local-degrade:v1:{:016x}",
                    util::fnv1a(texts.join("\n").as_bytes())
                )
            }
            DegradeGenerator::Remote(g) => g.fingerprint(),
        }
    }
}

/// Builds up to `n` distinct degraded probes of the sample's golden response.
pub fn build_degraded_set(
    sample: &RlSample,
    generator: &DegradeGenerator<'_>,
    n: usize,
    seed: u64,
) -> Result<ProbeSet> {
    if n == 0 {
        return Err(SeamError::Config("degrade n must be at least 1".into()));
    }
    let golden = &sample.golden;
    let mut seen = Distinct::with(&golden.text);
    let mut probes = Vec::new();
    match generator {
        DegradeGenerator::Local { pool } => {
            let base = util::derive_seed(seed, &[util::str_seed(sample.id())]);
            for attempt in 0..5 * n {
                if probes.len() == n {
                    break;
                }
                let op = DegradeOp::CYCLE[attempt % DegradeOp::CYCLE.len()];
                let sub = util::derive_seed(base, &[attempt as u64]);
                let Some(tokens) = op.apply(&golden.tokens.tokens, sub, pool) else {
                    continue;
                };
                let response = Response::from_tokens(&tokens);
                if response.tokens.is_empty() || !seen.insert(&response.text) {
                    continue;
                }
                probes.push(Probe {
                    response,
                    provenance: Provenance::Degrade {
                        operator: op.name().into(),
                        seed: sub,
                    },
                });
            }
        }
        DegradeGenerator::Remote(g) => {
            for text in g.generate_worse(&sample.instruction.text, &golden.text, n)? {
                let response = Response::new(text);
                if probes.len() == n || response.tokens.is_empty() || !seen.insert(&response.text) {
                    continue;
                }
                probes.push(Probe {
                    response,
                    provenance: Provenance::Degrade {
                        operator: "remote".into(),
                        seed,
                    },
                });
            }
        }
    }
    if probes.is_empty() {
        return Err(SeamError::Data(format!(
            "no degraded probes could be produced for sample `{}`",
            sample.id()
        )));
    }
    Ok(ProbeSet::assemble(sample.id(), Variant::Degrade, probes, n))
}
