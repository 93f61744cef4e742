//! Probe-set constructors.
//!
//! A probe set is the finite sample of "hacking" responses scored against one
//! RL sample's golden response. Three constructors are provided:
//!
//! - [`contrast`]: golden responses of similar-but-distinct SFT instructions
//! - [`degrade`]: rule-based (or remote) worse rewrites of the golden response
//! - [`adversarial`]: saliency-weighted greedy word substitution against the
//!   reward model
//!
//! Every constructor is a pure function of its inputs and seed, never emits
//! two probes with the same text, and records shortfalls instead of failing.

pub mod adversarial;
pub mod contrast;
pub mod degrade;
pub mod synonyms;

use serde::{Deserialize, Serialize};

use crate::corpus::Response;
use crate::error::{Result, SeamError};

pub use adversarial::{build_adversarial_set, AttackConfig, Edit};
pub use contrast::{build_contrast_set, ContrastConfig, ContrastIndex};
pub use degrade::{build_degraded_set, DegradeConfig, DegradeGenerator, DegradeOp};
pub use synonyms::{EmbeddingNeighbors, Lexicon, SynonymSource};

/// Default probe count per set for every variant.
pub const DEFAULT_PROBES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Contrast,
    Degrade,
    Adversarial,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Contrast, Variant::Degrade, Variant::Adversarial];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Contrast => "contrast",
            Variant::Degrade => "degrade",
            Variant::Adversarial => "adversarial",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = SeamError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrast" => Ok(Variant::Contrast),
            "degrade" | "gpt" => Ok(Variant::Degrade),
            "adversarial" | "adv" => Ok(Variant::Adversarial),
            other => Err(SeamError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// How a probe was produced; enough to reproduce it from the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum Provenance {
    Contrast {
        source_id: String,
        similarity: f64,
        in_band: bool,
    },
    Degrade {
        operator: String,
        seed: u64,
    },
    Adversarial {
        edits: Vec<Edit>,
        restart: usize,
        /// Number of edits applied when this state was emitted.
        iteration: usize,
        /// Forced UNK substitution (no positive-gain edit existed).
        forced: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub response: Response,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub requested: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub sample_id: String,
    pub variant: Variant,
    pub probes: Vec<Probe>,
    pub shortfall: Option<Shortfall>,
    /// Contrast only: no candidate fell inside the similarity band and the
    /// nearest out-of-band candidates were used instead.
    pub out_of_band: bool,
}

impl ProbeSet {
    pub(crate) fn assemble(
        sample_id: &str,
        variant: Variant,
        probes: Vec<Probe>,
        requested: usize,
    ) -> Self {
        let shortfall = (probes.len() < requested).then_some(Shortfall {
            requested,
            produced: probes.len(),
        });
        Self {
            sample_id: sample_id.to_string(),
            variant,
            probes,
            shortfall,
            out_of_band: false,
        }
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn to_row(&self) -> ProbeSetRow {
        ProbeSetRow {
            sample_id: self.sample_id.clone(),
            variant: self.variant,
            out_of_band: self.out_of_band,
            shortfall: self.shortfall,
            probes: self
                .probes
                .iter()
                .map(|p| ProbeRow {
                    text: p.response.text.clone(),
                    provenance: p.provenance.clone(),
                })
                .collect(),
        }
    }

    pub fn from_row(row: ProbeSetRow) -> Self {
        Self {
            sample_id: row.sample_id,
            variant: row.variant,
            out_of_band: row.out_of_band,
            shortfall: row.shortfall,
            probes: row
                .probes
                .into_iter()
                .map(|p| Probe {
                    response: Response::new(p.text),
                    provenance: p.provenance,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub text: String,
    pub provenance: Provenance,
}

/// Serialized probe set (one JSONL line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSetRow {
    pub sample_id: String,
    pub variant: Variant,
    pub out_of_band: bool,
    pub shortfall: Option<Shortfall>,
    pub probes: Vec<ProbeRow>,
}

/// Tracks emitted texts so a set never contains duplicates.
#[derive(Default)]
pub(crate) struct Distinct {
    seen: std::collections::HashSet<String>,
}

impl Distinct {
    pub(crate) fn with(excluded: &str) -> Self {
        let mut d = Self::default();
        d.seen.insert(excluded.to_string());
        d
    }

    pub(crate) fn insert(&mut self, text: &str) -> bool {
        self.seen.insert(text.to_string())
    }
}
