//! Adversarial probes: saliency-weighted greedy word substitution.
//!
//! For each position the search knows its saliency (reward drop when the
//! token becomes UNK) and its best synonym (largest reward gain as a single
//! edit of the golden response). Positions are visited by
//! `gain · softmax(saliency)`; an edit is kept only if it raises the current
//! reward, so every trajectory is monotone. Restarts after the first visit a
//! seeded random subset of positions, which diversifies the trajectories.
//! Every intermediate state becomes a probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Distinct, Probe, ProbeSet, Provenance, SynonymSource, Variant, DEFAULT_PROBES};
use crate::corpus::{Response, RlSample};
use crate::error::{Result, SeamError};
use crate::models::{reward_score, RewardBackend, UNK};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Probes to emit.
    pub n: usize,
    /// Replacement budget as a fraction of response tokens (at least one edit).
    pub max_replace_frac: f64,
    /// Synonym candidates tried per position.
    pub max_candidates: usize,
    /// Restarts, including the first full search.
    pub restarts: usize,
    /// Probability a position is eligible in restarts after the first.
    pub keep_prob: f64,
    /// A trajectory stops once its score exceeds the golden score by this.
    pub success_margin: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_PROBES,
            max_replace_frac: 0.3,
            max_candidates: 5,
            restarts: 3 * DEFAULT_PROBES,
            keep_prob: 0.75,
            success_margin: 0.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SeamError::Config("attack n must be at least 1".into()));
        }
        if !(self.max_replace_frac > 0.0 && self.max_replace_frac <= 1.0) {
            return Err(SeamError::Config(format!(
                "attack max_replace_frac must be in (0, 1], got {}",
                self.max_replace_frac
            )));
        }
        if self.max_candidates == 0 || self.restarts == 0 {
            return Err(SeamError::Config(
                "attack max_candidates and restarts must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) || !self.success_margin.is_finite() {
            return Err(SeamError::Config(
                "attack keep_prob must be in [0, 1] and success_margin finite".into(),
            ));
        }
        Ok(())
    }

    /// Edit budget for a response of `len` tokens.
    pub fn budget(&self, len: usize) -> usize {
        ((self.max_replace_frac * len as f64 + 1e-9).floor() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub from: String,
    pub to: String,
}

/// Per-position quantities computed once against the golden response.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionPlan {
    pub position: usize,
    pub saliency: f64,
    /// Best synonym and its single-edit gain; `None` without candidates.
    pub best: Option<(String, f64)>,
    pub priority: f64,
}

fn substitute(tokens: &[String], position: usize, word: &str) -> Response {
    let mut t = tokens.to_vec();
    t[position] = word.to_string();
    Response::from_tokens(&t)
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Saliency, best synonym, and priority of every position of the golden response.
pub fn plan_positions(
    sample: &RlSample,
    reward: &dyn RewardBackend,
    synonyms: &dyn SynonymSource,
    cfg: &AttackConfig,
) -> Result<Vec<PositionPlan>> {
    let tokens = &sample.golden.tokens.tokens;
    let instr = &sample.instruction;
    let base = reward_score(reward, instr, &sample.golden)?;
    let mut saliency = Vec::with_capacity(tokens.len());
    let mut best = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        saliency.push(base - reward_score(reward, instr, &substitute(tokens, i, UNK))?);
        let mut top: Option<(String, f64)> = None;
        for cand in synonyms
            .synonyms(tok)
            .into_iter()
            .filter(|c| c != tok && crate::corpus::tokenize(c).len() == 1)
            .take(cfg.max_candidates)
        {
            let gain = reward_score(reward, instr, &substitute(tokens, i, &cand))? - base;
            if top.as_ref().is_none_or(|(_, g)| gain > *g) {
                top = Some((cand, gain));
            }
        }
        best.push(top);
    }
    let weights = softmax(&saliency);
    Ok(best
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let priority = b.as_ref().map_or(0.0, |(_, g)| g * weights[i]);
            PositionPlan {
                position: i,
                saliency: saliency[i],
                best: b,
                priority,
            }
        })
        .collect())
}

/// One greedy trajectory over `eligible` positions; returns each accepted
/// state with its edit list.
fn trajectory(
    sample: &RlSample,
    reward: &dyn RewardBackend,
    plan: &[PositionPlan],
    eligible: &[bool],
    cfg: &AttackConfig,
    base: f64,
) -> Result<Vec<(Response, Vec<Edit>)>> {
    let mut order: Vec<&PositionPlan> = plan
        .iter()
        .filter(|p| eligible[p.position] && p.best.as_ref().is_some_and(|(_, g)| *g > 0.0))
        .collect();
    order.sort_by(|a, b| b.priority.total_cmp(&a.priority));
    let budget = cfg.budget(plan.len());
    let mut tokens = sample.golden.tokens.tokens.clone();
    let mut current = base;
    let mut edits = Vec::new();
    let mut states = Vec::new();
    for p in order {
        if edits.len() == budget || current > base + cfg.success_margin {
            break;
        }
        let (word, _) = p.best.as_ref().expect("filtered above");
        let cand = substitute(&tokens, p.position, word);
        let score = reward_score(reward, &sample.instruction, &cand)?;
        if score > current {
            edits.push(Edit {
                position: p.position,
                from: tokens[p.position].clone(),
                to: word.clone(),
            });
            tokens[p.position] = word.clone();
            current = score;
            states.push((cand, edits.clone()));
        }
    }
    Ok(states)
}

/// Builds up to `cfg.n` adversarial probes for the sample.
///
/// `synonyms` is required; `None` is a configuration error.
pub fn build_adversarial_set(
    sample: &RlSample,
    reward: &dyn RewardBackend,
    synonyms: Option<&dyn SynonymSource>,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<ProbeSet> {
    cfg.validate()?;
    let synonyms = synonyms
        .ok_or_else(|| SeamError::Config("adversarial probes need a synonym source".into()))?;
    let tokens = &sample.golden.tokens.tokens;
    if tokens.is_empty() {
        return Err(SeamError::Data(format!(
            "sample `{}` has an empty golden response",
            sample.id()
        )));
    }
    let mut seen = Distinct::with(&sample.golden.text);
    let forced = |position: usize| Probe {
        response: substitute(tokens, position, UNK),
        provenance: Provenance::Adversarial {
            edits: vec![Edit {
                position,
                from: tokens[position].clone(),
                to: UNK.to_string(),
            }],
            restart: 0,
            iteration: 1,
            forced: true,
        },
    };
    if tokens.len() < 2 {
        return Ok(ProbeSet::assemble(
            sample.id(),
            Variant::Adversarial,
            vec![forced(0)],
            cfg.n,
        ));
    }

    let plan = plan_positions(sample, reward, synonyms, cfg)?;
    let base = reward_score(reward, &sample.instruction, &sample.golden)?;
    let root = util::derive_seed(seed, &[util::str_seed(sample.id())]);
    let mut probes = Vec::new();
    for restart in 0..cfg.restarts {
        if probes.len() == cfg.n {
            break;
        }
        let eligible: Vec<bool> = if restart == 0 {
            vec![true; tokens.len()]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(root, &[restart as u64]));
            (0..tokens.len())
                .map(|_| rng.gen_bool(cfg.keep_prob))
                .collect()
        };
        for (response, edits) in trajectory(sample, reward, &plan, &eligible, cfg, base)? {
            if probes.len() == cfg.n {
                break;
            }
            if !seen.insert(&response.text) {
                continue;
            }
            let iteration = edits.len();
            probes.push(Probe {
                response,
                provenance: Provenance::Adversarial {
                    edits,
                    restart,
                    iteration,
                    forced: false,
                },
            });
        }
    }

    if probes.is_empty() {
        let mut by_saliency: Vec<&PositionPlan> = plan.iter().collect();
        by_saliency.sort_by(|a, b| b.saliency.total_cmp(&a.saliency));
        for p in by_saliency {
            if probes.len() == cfg.n {
                break;
            }
            let probe = forced(p.position);
            if seen.insert(&probe.response.text) {
                probes.push(probe);
            }
        }
    }
    Ok(ProbeSet::assemble(
        sample.id(),
        Variant::Adversarial,
        probes,
        cfg.n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearReward;
    use crate::samplers::Lexicon;

    fn lexicon(words: &[(&str, &[&str])]) -> Lexicon {
        let mut lex = Lexicon::new();
        for (w, s) in words {
            lex.insert(*w, s.iter().map(|x| x.to_string()).collect());
        }
        lex
    }

    #[test]
    fn missing_source_is_config_error() {
        let sample = RlSample::new("a", "q", "x y z");
        let r = LinearReward::zeros(16).unwrap();
        let err =
            build_adversarial_set(&sample, &r, None, &AttackConfig::default(), 0).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn flat_reward_yields_forced_unk_edits() {
        let sample = RlSample::new("a", "q", "x y z");
        let r = LinearReward::zeros(16).unwrap();
        let lex = lexicon(&[("x", &["xx"]), ("y", &["yy"])]);
        let set =
            build_adversarial_set(&sample, &r, Some(&lex), &AttackConfig::default(), 0).unwrap();
        assert_eq!(set.len(), 3);
        for p in &set.probes {
            assert!(matches!(
                p.provenance,
                Provenance::Adversarial { forced: true, .. }
            ));
            assert!(p.response.text.contains(UNK));
        }
    }

    #[test]
    fn short_response_gives_single_unk_probe() {
        let sample = RlSample::new("a", "q", "x");
        let r = LinearReward::zeros(16).unwrap();
        let lex = Lexicon::new();
        let set =
            build_adversarial_set(&sample, &r, Some(&lex), &AttackConfig::default(), 0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.probes[0].response.text, UNK);
    }

    #[test]
    fn dominant_synonym_is_substituted_first() {
        let dim = 1 << 12;
        let sample = RlSample::new("a", "q", "alpha beta gamma delta");
        let lex = lexicon(&[("beta", &["boost", "other"]), ("gamma", &["gam2"])]);
        let mut w = vec![0.0; dim];
        w[crate::models::reward::unigram_bucket("boost", dim)] = 10.0;
        w[crate::models::reward::unigram_bucket("gam2", dim)] = 0.1;
        let r = LinearReward::from_weights(w).unwrap();
        let set =
            build_adversarial_set(&sample, &r, Some(&lex), &AttackConfig::default(), 0).unwrap();
        let Provenance::Adversarial { edits, .. } = &set.probes[0].provenance else {
            panic!()
        };
        assert_eq!(edits[0].to, "boost");
        assert_eq!(edits[0].position, 1);
    }
}
