//! The SEAM score engine.
//!
//! For a sample `(I, r)` and probe set `X`, each probe contributes
//! `weight · ε` where `ε = max(R(I∘r*) − R(I∘r), 0)` and the weight is the
//! length-normalized log-likelihood of the probe under the policy (mode
//! `log`) or its exponential (mode `prob`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Instruction, Response, RlCorpus, RlSample};
use crate::error::{Result, SeamError};
use crate::models::{policy_logprob, reward_score, EmbeddingBackend, PolicyBackend, RewardBackend};
use crate::par;
use crate::samplers::{
    build_adversarial_set, build_degraded_set, AttackConfig, ContrastConfig, ContrastIndex,
    DegradeConfig, DegradeGenerator, ProbeSet, ProbeSetRow, Shortfall, SynonymSource, Variant,
};
use crate::util;

/// Version of the report and summary formats.
pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Log,
    Prob,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Log => "log",
            Mode::Prob => "prob",
        }
    }

    /// Probe weight for a length-normalized log-likelihood.
    pub fn weight(&self, norm_loglik: f64) -> f64 {
        match self {
            Mode::Log => norm_loglik,
            Mode::Prob => norm_loglik.exp(),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = SeamError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Mode::Log),
            "prob" => Ok(Mode::Prob),
            other => Err(SeamError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// `max(probe_reward − golden_reward, 0)`.
pub fn epsilon(golden_reward: f64, probe_reward: f64) -> f64 {
    (probe_reward - golden_reward).max(0.0)
}

/// Reward-model misjudgment of `star` relative to `golden`.
pub fn misjudgment(
    reward: &dyn RewardBackend,
    instruction: &Instruction,
    golden: &Response,
    star: &Response,
) -> Result<f64> {
    Ok(epsilon(
        reward_score(reward, instruction, golden)?,
        reward_score(reward, instruction, star)?,
    ))
}

/// Total log-probability (end marker included) over the response token count.
pub fn norm_loglik(
    policy: &dyn PolicyBackend,
    instruction: &Instruction,
    response: &Response,
) -> Result<f64> {
    let lp = policy_logprob(policy, instruction, response)?;
    Ok((lp.total / response.tokens.len() as f64).min(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    /// Index into the probe set.
    pub probe: usize,
    pub text: String,
    pub reward: f64,
    pub epsilon: f64,
    pub norm_loglik: f64,
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamRecord {
    pub sample_id: String,
    pub variant: Variant,
    pub mode: Mode,
    pub score: f64,
    pub golden_reward: f64,
    pub probe_scores: Vec<ProbeScore>,
    pub shortfall: Option<Shortfall>,
    pub out_of_band: bool,
    /// Probes dropped after backend errors (lenient scoring only).
    pub failed_probes: usize,
}

impl SeamRecord {
    fn assemble(
        sample_id: &str,
        set: &ProbeSet,
        mode: Mode,
        golden_reward: f64,
        probe_scores: Vec<ProbeScore>,
        failed_probes: usize,
    ) -> Self {
        let score = probe_scores.iter().map(|p| p.term).sum();
        Self {
            sample_id: sample_id.to_string(),
            variant: set.variant,
            mode,
            score,
            golden_reward,
            probe_scores,
            shortfall: set.shortfall,
            out_of_band: set.out_of_band,
            failed_probes,
        }
    }

    /// Same record under another weighting mode; no backend calls.
    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut out = self.clone();
        out.mode = mode;
        for p in out.probe_scores.iter_mut() {
            p.term = mode.weight(p.norm_loglik) * p.epsilon;
        }
        out.score = out.probe_scores.iter().map(|p| p.term).sum();
        out
    }
}

fn score_probe(
    policy: &dyn PolicyBackend,
    reward: &dyn RewardBackend,
    instruction: &Instruction,
    golden_reward: f64,
    mode: Mode,
    index: usize,
    response: &Response,
) -> Result<ProbeScore> {
    let r = reward_score(reward, instruction, response)?;
    let eps = epsilon(golden_reward, r);
    let nl = norm_loglik(policy, instruction, response)?;
    Ok(ProbeScore {
        probe: index,
        text: response.text.clone(),
        reward: r,
        epsilon: eps,
        norm_loglik: nl,
        term: mode.weight(nl) * eps,
    })
}

fn score_set(
    policy: &dyn PolicyBackend,
    reward: &dyn RewardBackend,
    sample: &RlSample,
    probes: &ProbeSet,
    mode: Mode,
    strict: bool,
) -> Result<SeamRecord> {
    if probes.is_empty() {
        return Err(SeamError::Data(format!(
            "empty probe set for sample `{}`",
            sample.id()
        )));
    }
    let instr = &sample.instruction;
    let golden_reward = reward_score(reward, instr, &sample.golden)?;
    let mut scores = Vec::with_capacity(probes.len());
    let mut failed = 0;
    for (i, p) in probes.probes.iter().enumerate() {
        match score_probe(policy, reward, instr, golden_reward, mode, i, &p.response) {
            Ok(s) => scores.push(s),
            Err(e) if strict || e.is_config() => {
                return Err(SeamError::Probe {
                    probe: format!("{}#{}/{}", sample.id(), probes.variant, i),
                    source: Box::new(e),
                })
            }
            Err(_) => failed += 1,
        }
    }
    if scores.is_empty() {
        return Err(SeamError::Data(format!(
            "every probe failed for sample `{}`",
            sample.id()
        )));
    }
    Ok(SeamRecord::assemble(
        sample.id(),
        probes,
        mode,
        golden_reward,
        scores,
        failed,
    ))
}

/// SEAM score of one sample over one probe set. Backend errors abort with
/// the failing probe attached.
pub fn seam_score(
    policy: &dyn PolicyBackend,
    reward: &dyn RewardBackend,
    sample: &RlSample,
    probes: &ProbeSet,
    mode: Mode,
) -> Result<SeamRecord> {
    score_set(policy, reward, sample, probes, mode, true)
}

/// Probe constructor settings shared by every sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub seed: u64,
    pub contrast: ContrastConfig,
    pub degrade: DegradeConfig,
    pub attack: AttackConfig,
}

/// Probe sources; a variant whose source is absent fails with a
/// configuration error.
pub struct Samplers<'a> {
    pub config: SamplerConfig,
    pub contrast: Option<(&'a ContrastIndex<'a>, &'a dyn EmbeddingBackend)>,
    pub degrade: Option<DegradeGenerator<'a>>,
    pub synonyms: Option<&'a dyn SynonymSource>,
}

impl<'a> Samplers<'a> {
    pub fn new(config: SamplerConfig) -> Self {
        Self {
            config,
            contrast: None,
            degrade: None,
            synonyms: None,
        }
    }

    pub fn build(
        &self,
        sample: &RlSample,
        variant: Variant,
        reward: &dyn RewardBackend,
    ) -> Result<ProbeSet> {
        let cfg = &self.config;
        match variant {
            Variant::Contrast => {
                let (index, emb) = self.contrast.ok_or_else(|| {
                    SeamError::Config("contrast variant needs an SFT corpus and embedding".into())
                })?;
                index.probe_set(sample, emb, &cfg.contrast)
            }
            Variant::Degrade => {
                let g = self
                    .degrade
                    .as_ref()
                    .ok_or_else(|| SeamError::Config("degrade variant needs a generator".into()))?;
                build_degraded_set(sample, g, cfg.degrade.n, cfg.seed)
            }
            Variant::Adversarial => {
                build_adversarial_set(sample, reward, self.synonyms, &cfg.attack, cfg.seed)
            }
        }
    }

    /// Content fingerprint of everything a variant's probe sets depend on
    /// (besides the sample itself).
    pub fn fingerprint(&self, variant: Variant, reward: &dyn RewardBackend) -> Result<String> {
        let cfg = &self.config;
        let parts: Vec<String> = match variant {
            Variant::Contrast => {
                let src = match self.contrast {
                    Some((index, emb)) => {
                        format!("{}|{}", index.corpus().fingerprint()?, emb.fingerprint())
                    }
                    None => "none".into(),
                };
                vec![util::fingerprint(&cfg.contrast)?, src]
            }
            Variant::Degrade => vec![
                util::fingerprint(&cfg.degrade)?,
                cfg.seed.to_string(),
                self.degrade
                    .as_ref()
                    .map_or("none".into(), |g| g.fingerprint()),
            ],
            Variant::Adversarial => vec![
                util::fingerprint(&cfg.attack)?,
                cfg.seed.to_string(),
                reward.fingerprint(),
                self.synonyms.map_or("none".into(), |s| s.fingerprint()),
            ],
        };
        Ok(util::sha256_hex(
            format!("{}|{}", variant, parts.join("|")).as_bytes(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreOptions {
    pub concurrency: usize,
    /// Abort on the first per-sample failure.
    pub strict: bool,
    /// Directory for cached probe sets and records.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub variant: Variant,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeamReport {
    pub mode: Mode,
    pub variants: Vec<Variant>,
    pub config_fingerprint: String,
    pub policy_fingerprint: String,
    pub reward_fingerprint: String,
    pub corpus_fingerprint: String,
    pub records: Vec<SeamRecord>,
    pub failures: Vec<SampleFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// Cache directory layout: `records/<key>.json` and `probes/<key>.jsonl`.
struct Cache<'a> {
    dir: &'a Path,
}

impl Cache<'_> {
    fn path(&self, kind: &str, key: &str, ext: &str) -> PathBuf {
        self.dir.join(kind).join(format!("{key}.{ext}"))
    }

    fn get_record(&self, key: &str) -> Option<SeamRecord> {
        let text = std::fs::read_to_string(self.path("records", key, "json")).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn put_record(&self, key: &str, rec: &SeamRecord) -> Result<()> {
        util::write_json_atomic(&self.path("records", key, "json"), rec)
    }

    fn get_probes(&self, key: &str) -> Option<ProbeSet> {
        let text = std::fs::read_to_string(self.path("probes", key, "jsonl")).ok()?;
        let row: ProbeSetRow = serde_json::from_str(text.lines().next()?).ok()?;
        Some(ProbeSet::from_row(row))
    }

    fn put_probes(&self, key: &str, set: &ProbeSet) -> Result<()> {
        util::write_jsonl_atomic(&self.path("probes", key, "jsonl"), &[set.to_row()])
    }
}

fn sample_key(sample: &RlSample) -> String {
    util::sha256_hex(
        format!(
            "{}\u{1}{}\u{1}{}",
            sample.id(),
            sample.instruction.text,
            sample.golden.text
        )
        .as_bytes(),
    )
}

/// Scores every sample under every requested variant.
///
/// Output order is sample-major, then variant in the order given, whatever
/// the concurrency. Per-sample failures are collected unless `strict`.
pub fn score_dataset(
    policy: &dyn PolicyBackend,
    reward: &dyn RewardBackend,
    corpus: &RlCorpus,
    samplers: &Samplers<'_>,
    variants: &[Variant],
    mode: Mode,
    opts: &ScoreOptions,
) -> Result<SeamReport> {
    score_dataset_with_stats(policy, reward, corpus, samplers, variants, mode, opts).map(|r| r.0)
}

/// [`score_dataset`] plus record-cache statistics.
pub fn score_dataset_with_stats(
    policy: &dyn PolicyBackend,
    reward: &dyn RewardBackend,
    corpus: &RlCorpus,
    samplers: &Samplers<'_>,
    variants: &[Variant],
    mode: Mode,
    opts: &ScoreOptions,
) -> Result<(SeamReport, CacheStats)> {
    if variants.is_empty() {
        return Err(SeamError::Config("no variants requested".into()));
    }
    let policy_fp = policy.fingerprint();
    let reward_fp = reward.fingerprint();
    let variant_fps = variants
        .iter()
        .map(|v| samplers.fingerprint(*v, reward))
        .collect::<Result<Vec<_>>>()?;
    let config_fingerprint = util::fingerprint(&(
        REPORT_FORMAT_VERSION,
        mode,
        variants,
        &variant_fps,
        opts.strict,
    ))?;
    let cache = opts.cache_dir.as_deref().map(|dir| Cache { dir });

    let tasks: Vec<(usize, usize)> = (0..corpus.len())
        .flat_map(|s| (0..variants.len()).map(move |v| (s, v)))
        .collect();
    let outcomes = par::map_ordered(&tasks, opts.concurrency.max(1), |_, &(s, v)| {
        let sample = &corpus.records()[s];
        let variant = variants[v];
        let probe_key =
            util::sha256_hex(format!("{}|{}", sample_key(sample), variant_fps[v]).as_bytes());
        let record_key = util::sha256_hex(
            format!("{probe_key}|{policy_fp}|{reward_fp}|{mode}|{}", opts.strict).as_bytes(),
        );
        if let Some(rec) = cache.as_ref().and_then(|c| c.get_record(&record_key)) {
            return (Ok(rec), true);
        }
        let out = (|| -> Result<SeamRecord> {
            let set = match cache.as_ref().and_then(|c| c.get_probes(&probe_key)) {
                Some(set) => set,
                None => {
                    let set = samplers.build(sample, variant, reward)?;
                    if let Some(c) = &cache {
                        c.put_probes(&probe_key, &set)?;
                    }
                    set
                }
            };
            let rec = score_set(policy, reward, sample, &set, mode, opts.strict)?;
            if let Some(c) = &cache {
                c.put_record(&record_key, &rec)?;
            }
            Ok(rec)
        })();
        (out, false)
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut stats = CacheStats::default();
    for (&(s, v), (out, hit)) in tasks.iter().zip(outcomes) {
        if hit {
            stats.hits += 1;
        } else {
            stats.misses += 1;
        }
        match out {
            Ok(rec) => records.push(rec),
            Err(e) if opts.strict || e.is_config() => return Err(e),
            Err(e) => failures.push(SampleFailure {
                sample_id: corpus.records()[s].id().to_string(),
                variant: variants[v],
                error: e.to_string(),
            }),
        }
    }
    Ok((
        SeamReport {
            mode,
            variants: variants.to_vec(),
            config_fingerprint,
            policy_fingerprint: policy_fp,
            reward_fingerprint: reward_fp,
            corpus_fingerprint: corpus.fingerprint()?,
            records,
            failures,
        },
        stats,
    ))
}

/// Score quantiles of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub count: usize,
    pub mean: f64,
    /// Linear-interpolation quantiles at 0, .1, .25, .5, .75, .9, 1.
    pub quantiles: BTreeMap<String, f64>,
    pub shortfalls: usize,
    pub out_of_band: usize,
    pub failed_probes: usize,
    pub failed_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub format_version: u32,
    pub mode: Mode,
    pub variants: Vec<Variant>,
    pub config_fingerprint: String,
    pub policy_fingerprint: String,
    pub reward_fingerprint: String,
    pub corpus_fingerprint: String,
    pub per_variant: BTreeMap<Variant, VariantSummary>,
    pub failures: Vec<SampleFailure>,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SeamReport {
    pub fn records_for(&self, variant: Variant) -> impl Iterator<Item = &SeamRecord> {
        self.records.iter().filter(move |r| r.variant == variant)
    }

    /// Sample id → score for one variant.
    pub fn scores(&self, variant: Variant) -> BTreeMap<String, f64> {
        self.records_for(variant)
            .map(|r| (r.sample_id.clone(), r.score))
            .collect()
    }

    /// The same report reweighted under another mode.
    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut out = self.clone();
        out.mode = mode;
        out.records = self.records.iter().map(|r| r.with_mode(mode)).collect();
        out
    }

    pub fn summary(&self) -> ReportSummary {
        let mut per_variant = BTreeMap::new();
        for &v in &self.variants {
            let recs: Vec<&SeamRecord> = self.records_for(v).collect();
            let mut scores: Vec<f64> = recs.iter().map(|r| r.score).collect();
            scores.sort_by(f64::total_cmp);
            let quantiles = [
                ("min", 0.0),
                ("q10", 0.1),
                ("q25", 0.25),
                ("median", 0.5),
                ("q75", 0.75),
                ("q90", 0.9),
                ("max", 1.0),
            ]
            .into_iter()
            .filter(|_| !scores.is_empty())
            .map(|(k, q)| (k.to_string(), quantile(&scores, q)))
            .collect();
            let mean = if scores.is_empty() {
                0.0
            } else {
                scores.iter().sum::<f64>() / scores.len() as f64
            };
            per_variant.insert(
                v,
                VariantSummary {
                    count: recs.len(),
                    mean,
                    quantiles,
                    shortfalls: recs.iter().filter(|r| r.shortfall.is_some()).count(),
                    out_of_band: recs.iter().filter(|r| r.out_of_band).count(),
                    failed_probes: recs.iter().map(|r| r.failed_probes).sum(),
                    failed_samples: self.failures.iter().filter(|f| f.variant == v).count(),
                },
            );
        }
        ReportSummary {
            format_version: REPORT_FORMAT_VERSION,
            mode: self.mode,
            variants: self.variants.clone(),
            config_fingerprint: self.config_fingerprint.clone(),
            policy_fingerprint: self.policy_fingerprint.clone(),
            reward_fingerprint: self.reward_fingerprint.clone(),
            corpus_fingerprint: self.corpus_fingerprint.clone(),
            per_variant,
            failures: self.failures.clone(),
        }
    }

    /// Path of the summary written next to a records file.
    pub fn summary_path(records_path: &Path) -> PathBuf {
        records_path.with_extension("summary.json")
    }

    pub fn records_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes records as JSONL at `path` and the summary next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.records_jsonl()?.as_bytes())?;
        util::write_json_atomic(&Self::summary_path(path), &self.summary())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| SeamError::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| SeamError::Parse {
                path: origin.clone(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let spath = Self::summary_path(path);
        let stext = std::fs::read_to_string(&spath).map_err(|e| SeamError::io(&spath, e))?;
        let s: ReportSummary = serde_json::from_str(&stext)?;
        if s.format_version != REPORT_FORMAT_VERSION {
            return Err(SeamError::Data(format!(
                "{}: unsupported report format version {}",
                spath.display(),
                s.format_version
            )));
        }
        Ok(Self {
            mode: s.mode,
            variants: s.variants,
            config_fingerprint: s.config_fingerprint,
            policy_fingerprint: s.policy_fingerprint,
            reward_fingerprint: s.reward_fingerprint,
            corpus_fingerprint: s.corpus_fingerprint,
            records,
            failures: s.failures,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::UniformPolicy;
    use crate::samplers::{Probe, Provenance};

    /// Reward given by a fixed text → score table.
    struct TableReward(Vec<(&'static str, f64)>);

    impl RewardBackend for TableReward {
        fn score(&self, _: &Instruction, r: &Response) -> Result<f64> {
            Ok(self
                .0
                .iter()
                .find(|(t, _)| *t == r.text)
                .map_or(0.0, |(_, s)| *s))
        }
        fn fingerprint(&self) -> String {
            "table".into()
        }
    }

    fn set(texts: &[&str]) -> ProbeSet {
        ProbeSet {
            sample_id: "s".into(),
            variant: Variant::Degrade,
            probes: texts
                .iter()
                .map(|t| Probe {
                    response: Response::new(*t),
                    provenance: Provenance::Degrade {
                        operator: "x".into(),
                        seed: 0,
                    },
                })
                .collect(),
            shortfall: None,
            out_of_band: false,
        }
    }

    #[test]
    fn misjudgment_examples() {
        let r = TableReward(vec![("gold", 0.5), ("low", 0.3), ("high", 0.9)]);
        let i = Instruction::new("i", "q");
        let g = Response::new("gold");
        assert_eq!(misjudgment(&r, &i, &g, &Response::new("low")).unwrap(), 0.0);
        assert!((misjudgment(&r, &i, &g, &Response::new("high")).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(misjudgment(&r, &i, &g, &g).unwrap(), 0.0);
    }

    #[test]
    fn norm_loglik_uniform_half() {
        // Vocabulary of two: every token and the end marker have prob 1/2.
        let p = UniformPolicy { size: 2 };
        let nl = norm_loglik(&p, &Instruction::new("i", "q"), &Response::new("a b c d")).unwrap();
        assert!((nl - 5.0 * 0.5f64.ln() / 4.0).abs() < 1e-12);
        assert!((nl + 0.8664).abs() < 1e-4);
    }

    #[test]
    fn record_arithmetic_in_both_modes() {
        let rec = SeamRecord {
            sample_id: "s".into(),
            variant: Variant::Degrade,
            mode: Mode::Log,
            score: 0.0,
            golden_reward: 0.0,
            probe_scores: vec![
                ProbeScore {
                    probe: 0,
                    text: "a".into(),
                    reward: 0.4,
                    epsilon: 0.4,
                    norm_loglik: -1.0,
                    term: 0.0,
                },
                ProbeScore {
                    probe: 1,
                    text: "b".into(),
                    reward: 0.0,
                    epsilon: 0.0,
                    norm_loglik: -2.0,
                    term: 0.0,
                },
            ],
            shortfall: None,
            out_of_band: false,
            failed_probes: 0,
        };
        assert!((rec.with_mode(Mode::Log).score + 0.4).abs() < 1e-12);
        assert!((rec.with_mode(Mode::Prob).score - 0.4 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((rec.with_mode(Mode::Prob).score - 0.14715).abs() < 1e-5);
    }

    #[test]
    fn seam_score_zero_when_golden_wins() {
        let r = TableReward(vec![("gold", 1.0), ("x", 0.2), ("y", 0.9)]);
        let p = UniformPolicy { size: 10 };
        let sample = RlSample::new("s", "q", "gold");
        for mode in [Mode::Log, Mode::Prob] {
            let rec = seam_score(&p, &r, &sample, &set(&["x", "y"]), mode).unwrap();
            assert_eq!(rec.score, 0.0);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("prob".parse::<Mode>().unwrap(), Mode::Prob);
        assert!("x".parse::<Mode>().is_err());
        assert_eq!(Mode::default(), Mode::Log);
    }
}
