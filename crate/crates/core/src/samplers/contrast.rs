//! Contrast probes: golden responses of similar but distinct SFT instructions.

use serde::{Deserialize, Serialize};

use super::{Distinct, Probe, ProbeSet, Provenance, Variant, DEFAULT_PROBES};
use crate::corpus::{Instruction, Response, RlSample, SftCorpus};
use crate::error::{Result, SeamError};
use crate::models::{cosine, embed, EmbeddingBackend};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastConfig {
    pub k: usize,
    /// Inclusive cosine band `[lo, hi]`.
    pub sim_range: [f64; 2],
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_PROBES,
            sim_range: [0.8, 0.9],
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.sim_range;
        if self.k == 0 {
            return Err(SeamError::Config("contrast k must be at least 1".into()));
        }
        if lo >= hi || !lo.is_finite() || !hi.is_finite() {
            return Err(SeamError::Config(format!(
                "contrast similarity range needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// One retrieved candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    /// Position in the indexed SFT corpus.
    pub index: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    pub in_band: bool,
}

/// Precomputed instruction embeddings of an SFT corpus.
pub struct ContrastIndex<'a> {
    corpus: &'a SftCorpus,
    vectors: Vec<Option<Vec<f64>>>,
}

impl<'a> ContrastIndex<'a> {
    pub fn build(
        corpus: &'a SftCorpus,
        embedding: &dyn EmbeddingBackend,
        concurrency: usize,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(SeamError::Data(
                "contrast retrieval needs a nonempty SFT corpus".into(),
            ));
        }
        let vectors = par::map_ordered(corpus.records(), concurrency, |_, ex| {
            embed(embedding, &ex.instruction.text).map(|v| v.iter().any(|x| *x != 0.0).then_some(v))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Self { corpus, vectors })
    }

    pub fn corpus(&self) -> &SftCorpus {
        self.corpus
    }

    /// Up to `k` candidates for `instruction`, most similar first.
    ///
    /// `exclude` drops responses (by text) before they count toward `k`.
    /// Candidates whose instruction text equals the query are never returned.
    pub fn retrieve(
        &self,
        instruction: &Instruction,
        embedding: &dyn EmbeddingBackend,
        cfg: &ContrastConfig,
        exclude: &mut dyn FnMut(&Response) -> bool,
    ) -> Result<Retrieval> {
        cfg.validate()?;
        let q = embed(embedding, &instruction.text)?;
        if q.iter().all(|x| *x == 0.0) {
            return Err(SeamError::Data(format!(
                "instruction `{}` embeds to the zero vector",
                instruction.id
            )));
        }
        let records = self.corpus.records();
        let mut scored = Vec::with_capacity(records.len());
        for (i, (ex, v)) in records.iter().zip(&self.vectors).enumerate() {
            let Some(v) = v else { continue };
            if ex.instruction.text == instruction.text {
                continue;
            }
            scored.push(Hit {
                index: i,
                similarity: cosine(&q, v)?,
            });
        }
        // Stable: ties keep corpus order.
        scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        let [lo, hi] = cfg.sim_range;
        let mut take = |pred: &dyn Fn(f64) -> bool| {
            let mut out = Vec::new();
            for h in scored.iter().filter(|h| pred(h.similarity)) {
                if out.len() == cfg.k {
                    break;
                }
                if !exclude(&records[h.index].golden) {
                    out.push(h.clone());
                }
            }
            out
        };
        let hits = take(&|s| s >= lo && s <= hi);
        if !hits.is_empty() {
            return Ok(Retrieval {
                hits,
                in_band: true,
            });
        }
        Ok(Retrieval {
            hits: take(&|s| s < lo),
            in_band: false,
        })
    }

    /// Contrast probe set for one RL sample.
    pub fn probe_set(
        &self,
        sample: &RlSample,
        embedding: &dyn EmbeddingBackend,
        cfg: &ContrastConfig,
    ) -> Result<ProbeSet> {
        let mut seen = Distinct::default();
        let r = self.retrieve(&sample.instruction, embedding, cfg, &mut |resp| {
            !seen.insert(&resp.text)
        })?;
        if r.hits.is_empty() {
            return Err(SeamError::Data(format!(
                "no contrast candidates for sample `{}`",
                sample.id()
            )));
        }
        let records = self.corpus.records();
        let probes = r
            .hits
            .iter()
            .map(|h| {
                let ex = &records[h.index];
                Probe {
                    response: ex.golden.clone(),
                    provenance: Provenance::Contrast {
                        source_id: ex.instruction.id.clone(),
                        similarity: h.similarity,
                        in_band: r.in_band,
                    },
                }
            })
            .collect();
        let mut set = ProbeSet::assemble(sample.id(), Variant::Contrast, probes, cfg.k);
        set.out_of_band = !r.in_band;
        Ok(set)
    }
}

/// Builds a contrast probe set by scanning `sft` directly.
pub fn build_contrast_set(
    sample: &RlSample,
    sft: &SftCorpus,
    embedding: &dyn EmbeddingBackend,
    cfg: &ContrastConfig,
) -> Result<ProbeSet> {
    ContrastIndex::build(sft, embedding, 1)?.probe_set(sample, embedding, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SftExample;
    use crate::models::HashEmbedding;

    fn corpus(instrs: &[&str]) -> SftCorpus {
        SftCorpus::new(
            instrs
                .iter()
                .enumerate()
                .map(|(i, s)| SftExample::new(format!("s{i}"), s, &format!("answer {i}")))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_instruction_is_excluded() {
        let e = HashEmbedding::new(256).unwrap();
        let sft = corpus(&["a b c d", "a b c e", "x y z w"]);
        let sample = RlSample::new("q", "a b c d", "gold");
        let cfg = ContrastConfig {
            k: 5,
            sim_range: [0.0, 1.0],
        };
        let set = build_contrast_set(&sample, &sft, &e, &cfg).unwrap();
        assert!(set.probes.iter().all(|p| p.response.text != "answer 0"));
    }

    #[test]
    fn falls_back_below_band() {
        let e = HashEmbedding::new(1024).unwrap();
        let sft = corpus(&["p q r s", "t u v w"]);
        let sample = RlSample::new("q", "a b c d", "gold");
        let cfg = ContrastConfig {
            k: 3,
            sim_range: [0.8, 0.9],
        };
        let set = build_contrast_set(&sample, &sft, &e, &cfg).unwrap();
        assert!(set.out_of_band);
        assert_eq!(set.len(), 2);
        assert_eq!(set.shortfall.unwrap().produced, 2);
    }

    #[test]
    fn rejects_empty_corpus_and_bad_band() {
        let e = HashEmbedding::new(64).unwrap();
        let empty = SftCorpus::new(vec![]).unwrap();
        let sample = RlSample::new("q", "a", "b");
        assert!(build_contrast_set(&sample, &empty, &e, &ContrastConfig::default()).is_err());
        let sft = corpus(&["a b"]);
        let bad = ContrastConfig {
            k: 1,
            sim_range: [0.9, 0.8],
        };
        assert!(build_contrast_set(&sample, &sft, &e, &bad)
            .unwrap_err()
            .is_config());
    }
}
