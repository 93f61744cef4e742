//! Desk-scale RLHF laboratory: synthetic worlds, policy improvement against
//! a reward model with a KL anchor, and quality metrics judged by the
//! world's oracle.

pub mod experiments;
pub mod world;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Instruction, PreferenceCorpus, Response, RlCorpus};
use crate::error::{Result, SeamError};
use crate::models::policy::Event;
use crate::models::{
    policy_logprob, policy_sample, reward_score, NgramPolicy, PolicyBackend, RewardBackend,
};
use crate::par;
use crate::util;

pub use experiments::*;
pub use world::{generate_world, ConstantOracle, LabWorld, Oracle, QualityOracle, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    /// KL coefficient.
    pub beta: f64,
    pub samples_per_instruction: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Sampling length cap.
    pub max_len: usize,
    /// Exponent applied to each event's reweighting factor.
    pub update_rate: f64,
    /// Pseudo-visits at weight 1 that damp events seen only a few times.
    pub prior_visits: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            samples_per_instruction: 8,
            steps: 6,
            step_size: 1.0,
            seed: 0,
            max_len: 24,
            update_rate: 3.0,
            prior_visits: 64.0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SeamError::Config(format!(
                "beta must be ≥ 0, got {}",
                self.beta
            )));
        }
        if self.samples_per_instruction == 0 || self.steps == 0 || self.max_len == 0 {
            return Err(SeamError::Config(
                "samples_per_instruction, steps, and max_len must be at least 1".into(),
            ));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(SeamError::Config(format!(
                "step_size must be finite and non-negative, got {}",
                self.step_size
            )));
        }
        if !(self.prior_visits >= 0.0 && self.prior_visits.is_finite()) {
            return Err(SeamError::Config(
                "prior_visits must be non-negative".into(),
            ));
        }
        if !(self.update_rate > 0.0 && self.update_rate.is_finite()) {
            return Err(SeamError::Config("update_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample weights of one instruction's group: the baseline-subtracted
/// advantage is scaled by `step_size / (1 + step_size·beta)` and
/// exponentiated, then the weights are normalized to mean one.
pub fn group_weights(advantages: &[f64], step_size: f64, beta: f64) -> Vec<f64> {
    let k = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / k;
    let scale = step_size / (1.0 + step_size * beta);
    let logits: Vec<f64> = advantages.iter().map(|a| scale * (a - mean)).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| k * x / z).collect()
}

/// Improves `policy` against `reward` on the RL instructions; `policy` is the
/// KL reference and is left untouched.
pub fn rl_improve(
    policy: &NgramPolicy,
    reward: &dyn RewardBackend,
    d_rl: &RlCorpus,
    cfg: &RlConfig,
) -> Result<NgramPolicy> {
    rl_improve_with(policy, reward, d_rl, cfg, par::default_concurrency())
}

/// [`rl_improve`] with an explicit worker limit. Results do not depend on it.
///
/// Each step samples `k` responses per instruction from the current policy
/// with seeds derived from the step, the instruction id, and the sample
/// index, and scores each with `R − β·(log π_cur − log π_ref)`. The
/// [`group_weights`] of every sample are credited to the highest-order
/// n-gram events it visits; each visited event's count is then multiplied
/// by `((Σw + a) / (visits + a))^update_rate`, with `a = prior_visits`, and its context renormalized
/// to the previous total. Uniform weights leave the policy unchanged, and
/// continuations the policy has never seen stay unseen.
pub fn rl_improve_with(
    policy: &NgramPolicy,
    reward: &dyn RewardBackend,
    d_rl: &RlCorpus,
    cfg: &RlConfig,
    concurrency: usize,
) -> Result<NgramPolicy> {
    cfg.validate()?;
    let mut current = policy.clone();
    if cfg.step_size == 0.0 {
        return Ok(current);
    }
    let top = policy.order() - 1;
    for step in 0..cfg.steps {
        let cur = &current;
        let groups = par::map_ordered(
            d_rl.records(),
            concurrency,
            |_, s| -> Result<Vec<(Event, f64)>> {
                let instr = &s.instruction;
                let id_seed = util::str_seed(s.id());
                let mut responses = Vec::with_capacity(cfg.samples_per_instruction);
                let mut adv = Vec::with_capacity(cfg.samples_per_instruction);
                for j in 0..cfg.samples_per_instruction {
                    let seed = util::derive_seed(cfg.seed, &[step as u64, id_seed, j as u64]);
                    let r = policy_sample(cur, instr, seed, cfg.max_len)?;
                    let kl = if cfg.beta > 0.0 {
                        policy_logprob(cur, instr, &r)?.total
                            - policy_logprob(policy, instr, &r)?.total
                    } else {
                        0.0
                    };
                    adv.push(reward_score(reward, instr, &r)? - cfg.beta * kl);
                    responses.push(r);
                }
                let w = group_weights(&adv, cfg.step_size, cfg.beta);
                let mut visits = Vec::new();
                for (r, wi) in responses.iter().zip(w) {
                    visits.extend(
                        cur.response_events(instr, r)
                            .into_iter()
                            .filter(|e| e.k as usize == top)
                            .map(|e| (e, wi)),
                    );
                }
                Ok(visits)
            },
        );
        let mut credit: HashMap<Event, (f64, f64)> = HashMap::new();
        for g in groups {
            for (e, w) in g? {
                let c = credit.entry(e).or_insert((0.0, 0.0));
                c.0 += w;
                c.1 += 1.0;
            }
        }
        let factors: Vec<(Event, f64)> = credit
            .into_iter()
            .map(|(e, (sw, n))| {
                (
                    e,
                    ((sw + cfg.prior_visits) / (n + cfg.prior_visits)).powf(cfg.update_rate),
                )
            })
            .collect();
        current.reweight_counts(&factors);
    }
    Ok(current)
}

/// Sampling settings for oracle-judged policy quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpmConfig {
    pub seed: u64,
    pub max_len: usize,
    /// Samples per instruction; seeds depend only on the instruction id and
    /// sample index, so different policies are compared on common draws.
    pub samples: usize,
}

impl Default for QpmConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_len: 24,
            samples: 1,
        }
    }
}

fn sample_seed(seed: u64, id: &str, j: usize) -> u64 {
    util::derive_seed(seed, &[util::str_seed(id), j as u64])
}

/// Seeded samples of `policy` for each instruction: `samples` per instruction.
pub fn draw_samples(
    policy: &dyn PolicyBackend,
    instructions: &[Instruction],
    cfg: &QpmConfig,
    concurrency: usize,
) -> Result<Vec<Vec<Response>>> {
    if cfg.samples == 0 {
        return Err(SeamError::Config("samples must be at least 1".into()));
    }
    par::map_ordered(instructions, concurrency, |_, instr| {
        (0..cfg.samples)
            .map(|j| {
                policy_sample(
                    policy,
                    instr,
                    sample_seed(cfg.seed, &instr.id, j),
                    cfg.max_len,
                )
            })
            .collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect()
}

/// Mean oracle quality of seeded policy samples over the test instructions.
pub fn q_pm(
    policy: &dyn PolicyBackend,
    test: &[Instruction],
    oracle: &dyn QualityOracle,
    cfg: &QpmConfig,
) -> Result<f64> {
    q_pm_with(policy, test, oracle, cfg, 1)
}

pub fn q_pm_with(
    policy: &dyn PolicyBackend,
    test: &[Instruction],
    oracle: &dyn QualityOracle,
    cfg: &QpmConfig,
    concurrency: usize,
) -> Result<f64> {
    if test.is_empty() {
        return Err(SeamError::Data(
            "q_pm needs at least one instruction".into(),
        ));
    }
    let samples = draw_samples(policy, test, cfg, concurrency)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (instr, rs) in test.iter().zip(&samples) {
        for r in rs {
            sum += oracle.quality(instr, r);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Fraction of pairs the reward orders like the labels; exact ties count ½.
pub fn q_rm(reward: &dyn RewardBackend, pairs: &PreferenceCorpus) -> Result<f64> {
    if pairs.is_empty() {
        return Err(SeamError::Data("q_rm needs at least one pair".into()));
    }
    let mut acc = 0.0;
    for p in pairs.records() {
        let a = reward_score(reward, &p.instruction, &p.preferred)?;
        let b = reward_score(reward, &p.instruction, &p.rejected)?;
        acc += if a > b {
            1.0
        } else if a == b {
            0.5
        } else {
            0.0
        };
    }
    Ok(acc / pairs.len() as f64)
}

/// Oracle quality exposed as a reward backend.
pub struct OracleReward<'a>(pub &'a dyn QualityOracle);

impl RewardBackend for OracleReward<'_> {
    fn score(&self, i: &Instruction, r: &Response) -> Result<f64> {
        Ok(self.0.quality(i, r))
    }
    fn fingerprint(&self) -> String {
        "oracle".into()
    }
}

/// `−R`.
pub struct NegatedReward<R>(pub R);

impl<R: RewardBackend> RewardBackend for NegatedReward<R> {
    fn score(&self, i: &Instruction, r: &Response) -> Result<f64> {
        Ok(-self.0.score(i, r)?)
    }
    fn fingerprint(&self) -> String {
        format!("neg:{}", self.0.fingerprint())
    }
}

/// `R + c`.
pub struct ShiftedReward<R> {
    pub inner: R,
    pub shift: f64,
}

impl<R: RewardBackend> RewardBackend for ShiftedReward<R> {
    fn score(&self, i: &Instruction, r: &Response) -> Result<f64> {
        Ok(self.inner.score(i, r)? + self.shift)
    }
    fn fingerprint(&self) -> String {
        format!("shift({}):{}", self.shift, self.inner.fingerprint())
    }
}

/// Sign of a difference: −1, 0, or 1.
fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// One A/B comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub id: String,
    pub response_a: String,
    pub response_b: String,
    /// Sign of `R(a) − R(b)`.
    pub reward_pref: i8,
    /// Sign of `Q(a) − Q(b)`.
    pub oracle_pref: i8,
}

impl PairDecision {
    pub fn double_tie(&self) -> bool {
        self.reward_pref == 0 && self.oracle_pref == 0
    }

    pub fn mismatch(&self) -> bool {
        self.reward_pref != self.oracle_pref
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchResult {
    pub rate: f64,
    /// Pairs that were not double ties.
    pub counted: usize,
    pub decisions: Vec<PairDecision>,
}

/// Rate at which the reward's A/B preference disagrees with the oracle's on
/// one sample from each policy for the first `n` instructions. Pairs tied
/// under both judges are excluded; with none left the rate is 0.
pub fn mismatch_rate(
    policy_a: &dyn PolicyBackend,
    policy_b: &dyn PolicyBackend,
    reward: &dyn RewardBackend,
    oracle: &dyn QualityOracle,
    test: &[Instruction],
    n: usize,
    cfg: &QpmConfig,
) -> Result<MismatchResult> {
    if n > test.len() {
        return Err(SeamError::Config(format!(
            "mismatch n = {n} exceeds the {} test instructions",
            test.len()
        )));
    }
    let one = QpmConfig {
        samples: 1,
        ..cfg.clone()
    };
    let a = draw_samples(policy_a, &test[..n], &one, 1)?;
    let b = draw_samples(
        policy_b,
        &test[..n],
        &QpmConfig {
            seed: cfg.seed ^ 0x5eed,
            ..one
        },
        1,
    )?;
    let mut decisions = Vec::with_capacity(n);
    for ((instr, ra), rb) in test[..n].iter().zip(a).zip(b) {
        let (ra, rb) = (&ra[0], &rb[0]);
        decisions.push(PairDecision {
            id: instr.id.clone(),
            response_a: ra.text.clone(),
            response_b: rb.text.clone(),
            reward_pref: sign(reward_score(reward, instr, ra)? - reward_score(reward, instr, rb)?),
            oracle_pref: sign(oracle.quality(instr, ra) - oracle.quality(instr, rb)),
        });
    }
    Ok(tally(decisions))
}

/// Recounts a decision log.
pub fn tally(decisions: Vec<PairDecision>) -> MismatchResult {
    let counted: Vec<&PairDecision> = decisions.iter().filter(|d| !d.double_tie()).collect();
    let bad = counted.iter().filter(|d| d.mismatch()).count();
    let rate = if counted.is_empty() {
        0.0
    } else {
        bad as f64 / counted.len() as f64
    };
    MismatchResult {
        rate,
        counted: counted.len(),
        decisions,
    }
}

/// Fraction of common-seed samples on which two policies emit different
/// responses; an upper bound on the total-variation distance between their
/// sampled-response distributions, estimated on the given instructions.
pub fn sampled_divergence(
    a: &dyn PolicyBackend,
    b: &dyn PolicyBackend,
    instructions: &[Instruction],
    cfg: &QpmConfig,
) -> Result<f64> {
    if instructions.is_empty() {
        return Err(SeamError::Data(
            "divergence needs at least one instruction".into(),
        ));
    }
    let sa = draw_samples(a, instructions, cfg, 1)?;
    let sb = draw_samples(b, instructions, cfg, 1)?;
    let mut diff = 0usize;
    let mut n = 0usize;
    for (x, y) in sa.iter().zip(&sb) {
        for (p, q) in x.iter().zip(y) {
            diff += usize::from(p.text != q.text);
            n += 1;
        }
    }
    Ok(diff as f64 / n as f64)
}

/// Empirical total-variation distance between two multisets of responses.
pub fn empirical_tv(a: &[Response], b: &[Response]) -> f64 {
    let mut counts: HashMap<&str, (f64, f64)> = HashMap::new();
    for r in a {
        counts.entry(&r.text).or_default().0 += 1.0 / a.len() as f64;
    }
    for r in b {
        counts.entry(&r.text).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * counts.values().map(|(p, q)| (p - q).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PreferencePair, RlSample, SftCorpus, SftExample};
    use crate::models::{train_policy, LinearReward};

    fn toy() -> (NgramPolicy, RlCorpus) {
        let sft = SftCorpus::new(
            (0..20)
                .map(|i| {
                    SftExample::new(
                        format!("s{i}"),
                        &format!("ask {}", i % 4),
                        if (i / 4) % 2 == 0 {
                            "good answer here"
                        } else {
                            "bad answer there"
                        },
                    )
                })
                .collect(),
        )
        .unwrap();
        let rl = RlCorpus::new(
            (0..20)
                .map(|i| {
                    RlSample::new(
                        format!("r{i}"),
                        &format!("ask {}", i % 4),
                        "good answer here",
                    )
                })
                .collect(),
        )
        .unwrap();
        (train_policy(&sft, 3, 0.5).unwrap(), rl)
    }

    fn good_reward() -> LinearReward {
        let dim = 1 << 10;
        let mut w = vec![0.0; dim];
        w[crate::models::reward::unigram_bucket("good", dim)] = 3.0;
        LinearReward::from_weights(w).unwrap()
    }

    fn instrs(rl: &RlCorpus) -> Vec<Instruction> {
        rl.records().iter().map(|s| s.instruction.clone()).collect()
    }

    #[test]
    fn group_weights_have_unit_mean_and_order() {
        let w = group_weights(&[1.0, 0.0, -1.0, 0.0], 1.0, 0.0);
        assert!((w.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(w[0] > w[1] && w[1] > w[2]);
        assert_eq!(group_weights(&[2.0, 2.0], 5.0, 0.0), vec![1.0, 1.0]);
    }

    #[test]
    fn zero_step_size_is_identity() {
        let (p, rl) = toy();
        let cfg = RlConfig {
            step_size: 0.0,
            ..RlConfig::default()
        };
        let out = rl_improve(&p, &good_reward(), &rl, &cfg).unwrap();
        assert_eq!(out.fingerprint(), p.fingerprint());
    }

    #[test]
    fn constant_reward_without_kl_is_identity() {
        let (p, rl) = toy();
        let cfg = RlConfig {
            beta: 0.0,
            ..RlConfig::default()
        };
        let flat = LinearReward::zeros(1 << 10).unwrap();
        let out = rl_improve(&p, &flat, &rl, &cfg).unwrap();
        assert_eq!(out.to_file().contexts.len(), p.to_file().contexts.len());
        assert_eq!(out.fingerprint(), p.fingerprint());
    }

    #[test]
    fn reward_moves_policy_toward_rewarded_tokens() {
        let (p, rl) = toy();
        let cfg = RlConfig {
            beta: 0.0,
            step_size: 2.0,
            ..RlConfig::default()
        };
        let out = rl_improve(&p, &good_reward(), &rl, &cfg).unwrap();
        let q = QpmConfig {
            samples: 20,
            ..QpmConfig::default()
        };
        let share = |pol: &NgramPolicy| {
            let s = draw_samples(pol, &instrs(&rl), &q, 1).unwrap();
            let all: Vec<&Response> = s.iter().flatten().collect();
            all.iter().filter(|r| r.text.contains("good")).count() as f64 / all.len() as f64
        };
        assert!(
            share(&out) > share(&p) + 0.1,
            "{} vs {}",
            share(&out),
            share(&p)
        );
    }

    #[test]
    fn huge_beta_anchors_policy() {
        let (p, rl) = toy();
        let cfg = RlConfig {
            beta: 1e6,
            step_size: 2.0,
            ..RlConfig::default()
        };
        let out = rl_improve(&p, &good_reward(), &rl, &cfg).unwrap();
        let q = QpmConfig {
            samples: 10,
            ..QpmConfig::default()
        };
        assert!(sampled_divergence(&p, &out, &instrs(&rl), &q).unwrap() < 0.01);
    }

    #[test]
    fn result_is_independent_of_concurrency() {
        let (p, rl) = toy();
        let cfg = RlConfig::default();
        let a = rl_improve_with(&p, &good_reward(), &rl, &cfg, 1).unwrap();
        let b = rl_improve_with(&p, &good_reward(), &rl, &cfg, 4).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn q_pm_constant_and_recount() {
        let (p, rl) = toy();
        let test = instrs(&rl);
        let cfg = QpmConfig {
            samples: 3,
            ..QpmConfig::default()
        };
        assert_eq!(q_pm(&p, &test, &ConstantOracle(7.0), &cfg).unwrap(), 7.0);
        struct Len;
        impl QualityOracle for Len {
            fn quality(&self, _: &Instruction, r: &Response) -> f64 {
                r.tokens.len() as f64
            }
        }
        let samples = draw_samples(&p, &test, &cfg, 1).unwrap();
        let lens: Vec<f64> = samples
            .iter()
            .flatten()
            .map(|r| r.tokens.len() as f64)
            .collect();
        let brute = lens.iter().sum::<f64>() / lens.len() as f64;
        assert!((q_pm(&p, &test, &Len, &cfg).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn q_rm_ties_and_recount() {
        let pairs = PreferenceCorpus::new(vec![
            PreferencePair::new("a", "q", "good x", "bad x").unwrap(),
            PreferencePair::new("b", "q", "bad y", "good y").unwrap(),
            PreferencePair::new("c", "q", "good z", "fine z").unwrap(),
        ])
        .unwrap();
        assert_eq!(
            q_rm(&LinearReward::zeros(64).unwrap(), &pairs).unwrap(),
            0.5
        );
        let r = good_reward();
        let brute = pairs
            .records()
            .iter()
            .map(|p| {
                let (a, b) = (
                    r.score(&p.instruction, &p.preferred).unwrap(),
                    r.score(&p.instruction, &p.rejected).unwrap(),
                );
                if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / 3.0;
        assert_eq!(q_rm(&r, &pairs).unwrap(), brute);
    }

    #[test]
    fn mismatch_identities() {
        let (p, rl) = toy();
        let cfg = RlConfig {
            beta: 0.0,
            step_size: 2.0,
            ..RlConfig::default()
        };
        let q = rl_improve(&p, &good_reward(), &rl, &cfg).unwrap();
        let oracle = world::ConstantOracle(1.0);
        struct Good;
        impl QualityOracle for Good {
            fn quality(&self, _: &Instruction, r: &Response) -> f64 {
                r.tokens.iter().filter(|t| *t == "good").count() as f64
            }
        }
        let test = instrs(&rl);
        let qc = QpmConfig::default();
        let same = mismatch_rate(&p, &q, &OracleReward(&Good), &Good, &test, 20, &qc).unwrap();
        assert_eq!(same.rate, 0.0);
        let anti = mismatch_rate(
            &p,
            &q,
            &NegatedReward(OracleReward(&Good)),
            &Good,
            &test,
            20,
            &qc,
        )
        .unwrap();
        assert!(anti.counted > 0);
        assert_eq!(anti.rate, 1.0);
        let flat = mismatch_rate(&p, &q, &good_reward(), &oracle, &test, 20, &qc).unwrap();
        let recount = tally(flat.decisions.clone());
        assert_eq!(recount, flat);
        let manual = flat
            .decisions
            .iter()
            .filter(|d| !d.double_tie() && d.reward_pref != d.oracle_pref)
            .count();
        assert_eq!(manual as f64 / flat.counted.max(1) as f64, flat.rate);
        assert!(mismatch_rate(&p, &q, &good_reward(), &oracle, &test, 21, &qc).is_err());
    }

    #[test]
    fn empirical_tv_bounds() {
        let a = vec![Response::new("x"), Response::new("y")];
        let b = vec![Response::new("x"), Response::new("z")];
        assert_eq!(empirical_tv(&a, &a), 0.0);
        assert_eq!(empirical_tv(&a, &b), 0.5);
    }
}
