//! End-to-end experiments on a generated world: likelihood ordering of
//! probe variants, less-is-more filtering, filter sweeps, planted recall,
//! mismatch rates, cross-validation across dataset roles, quality ladders
//! and saturation, selection overlap, and targeted augmentation.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{generate_world, LabWorld, WorldConfig};
use super::{mismatch_rate, q_pm_with, q_rm, rl_improve_with, MismatchResult, QpmConfig, RlConfig};
use crate::corpus::{Corpus, Instruction, PreferenceCorpus, Record, Response, RlCorpus, SftCorpus};
use crate::error::{Result, SeamError};
use crate::models::{
    train_policy, train_reward, HashEmbedding, LinearReward, NgramPolicy, PolicyBackend,
    RewardBackend, RewardTrainConfig,
};
use crate::par;
use crate::pipeline::{
    build_augmentation_sets, filter_bottom, overlap_rate, select, select_augmentation_targets,
    select_by_scores, AugmentConfig,
};
use crate::samplers::{ContrastIndex, DegradeGenerator, Variant};
use crate::seam::{score_dataset, Mode, SamplerConfig, Samplers, ScoreOptions, SeamReport};
use crate::util;

/// Everything an experiment needs besides the experiment's own knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    pub world: WorldConfig,
    pub policy_order: usize,
    pub discount: f64,
    pub reward: RewardTrainConfig,
    pub rl: RlConfig,
    pub qpm: QpmConfig,
    pub sampler: SamplerConfig,
    /// Held-out share of each corpus, stratified by topic.
    pub test_fraction: f64,
    pub filter_fraction: f64,
    pub mode: Mode,
    /// Worker limit for scoring and sweep cells; results do not depend on it.
    pub concurrency: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            policy_order: 3,
            discount: 0.3,
            reward: RewardTrainConfig::default(),
            rl: RlConfig::default(),
            qpm: QpmConfig {
                samples: 16,
                ..QpmConfig::default()
            },
            sampler: SamplerConfig::default(),
            test_fraction: 0.2,
            filter_fraction: 0.2,
            mode: Mode::Log,
            concurrency: 4,
        }
    }
}

impl LabConfig {
    /// A copy with every seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.world.seed = seed;
        c.reward.seed = util::derive_seed(seed, &[11]);
        c.rl.seed = util::derive_seed(seed, &[12]);
        c.qpm.seed = util::derive_seed(seed, &[13]);
        c.sampler.seed = util::derive_seed(seed, &[14]);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.rl.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(SeamError::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(self.filter_fraction > 0.0 && self.filter_fraction < 1.0) {
            return Err(SeamError::Config(format!(
                "filter_fraction must be in (0, 1), got {}",
                self.filter_fraction
            )));
        }
        if self.reward.dim != self.world.reward_dim {
            return Err(SeamError::Config(format!(
                "reward dim {} differs from the world's reward dim {}",
                self.reward.dim, self.world.reward_dim
            )));
        }
        Ok(())
    }

    fn workers(&self) -> usize {
        self.concurrency.max(1)
    }
}

/// Topic-stratified holdout: each topic contributes `round(fraction · size)`
/// of its records to the test side. Both sides keep the original order.
pub fn holdout<T: Record>(
    corpus: &Corpus<T>,
    fraction: f64,
    seed: u64,
    stratum: impl Fn(&T) -> usize,
) -> Result<(Corpus<T>, Corpus<T>)> {
    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for r in corpus.records() {
        groups.entry(stratum(r)).or_default().push(r.id());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: HashSet<String> = HashSet::new();
    for ids in groups.values_mut() {
        ids.shuffle(&mut rng);
        let n = util::round_half_up(fraction, ids.len());
        test.extend(ids[..n].iter().map(|s| s.to_string()));
    }
    let train = corpus.retain_ids(|id| !test.contains(id));
    let held = corpus.retain_ids(|id| test.contains(id));
    if train.is_empty() || held.is_empty() {
        return Err(SeamError::Config(format!(
            "holdout fraction {fraction} leaves an empty side"
        )));
    }
    Ok((train, held))
}

/// A world with train/test splits and the SFT policy and reward model
/// trained on the training sides.
#[derive(Debug, Clone)]
pub struct Lab {
    pub config: LabConfig,
    pub world: LabWorld,
    pub sft_train: SftCorpus,
    pub sft_test: SftCorpus,
    pub pref_train: PreferenceCorpus,
    pub pref_test: PreferenceCorpus,
    pub rl_train: RlCorpus,
    pub rl_test: RlCorpus,
    pub policy: NgramPolicy,
    pub reward: LinearReward,
    pub embedding: HashEmbedding,
}

impl Lab {
    pub fn prepare(config: &LabConfig) -> Result<Self> {
        config.validate()?;
        let world = generate_world(&config.world)?;
        Self::from_world(config, world)
    }

    pub fn from_world(config: &LabConfig, world: LabWorld) -> Result<Self> {
        config.validate()?;
        let seed = util::derive_seed(config.world.seed, &[20]);
        let topic = |i: &Instruction| world.topic_of(i).unwrap_or(usize::MAX);
        let tf = config.test_fraction;
        let (sft_train, sft_test) = holdout(&world.d_p, tf, seed, |r| topic(&r.instruction))?;
        let (pref_train, pref_test) = holdout(&world.d_r, tf, seed ^ 1, |r| topic(&r.instruction))?;
        let (rl_train, rl_test) = holdout(&world.d_rl, tf, seed ^ 2, |r| topic(&r.instruction))?;
        let policy = train_policy(&sft_train, config.policy_order, config.discount)?;
        let reward = train_reward(&pref_train, &config.reward)?;
        let embedding = HashEmbedding::new(config.world.embed_dim)?;
        Ok(Self {
            config: config.clone(),
            world,
            sft_train,
            sft_test,
            pref_train,
            pref_test,
            rl_train,
            rl_test,
            policy,
            reward,
            embedding,
        })
    }

    pub fn rl_test_instructions(&self) -> Vec<Instruction> {
        self.rl_test
            .records()
            .iter()
            .map(|s| s.instruction.clone())
            .collect()
    }

    /// Planted ids that fall in the RL training split.
    pub fn planted_train(&self) -> Vec<String> {
        self.rl_train
            .ids()
            .into_iter()
            .filter(|id| self.world.planted.contains(id))
            .collect()
    }

    /// Strict SEAM scoring of an RL corpus with the lab's samplers.
    pub fn score(
        &self,
        policy: &dyn PolicyBackend,
        reward: &dyn RewardBackend,
        corpus: &RlCorpus,
        variants: &[Variant],
    ) -> Result<SeamReport> {
        let index = ContrastIndex::build(&self.sft_train, &self.embedding, self.config.workers())?;
        let pool: Vec<Response> = self
            .world
            .d_rl
            .records()
            .iter()
            .map(|s| s.golden.clone())
            .collect();
        let samplers = Samplers {
            config: self.config.sampler.clone(),
            contrast: Some((&index, &self.embedding)),
            degrade: Some(DegradeGenerator::Local { pool: &pool }),
            synonyms: Some(&self.world.lexicon),
        };
        score_dataset(
            policy,
            reward,
            corpus,
            &samplers,
            variants,
            self.config.mode,
            &ScoreOptions {
                concurrency: self.config.workers(),
                strict: true,
                cache_dir: None,
            },
        )
    }

    /// RL against the lab reward on `corpus`, single-threaded.
    pub fn improve(&self, corpus: &RlCorpus) -> Result<NgramPolicy> {
        rl_improve_with(&self.policy, &self.reward, corpus, &self.config.rl, 1)
    }

    /// Q_PM on the RL test instructions.
    pub fn q_pm(&self, policy: &dyn PolicyBackend) -> Result<f64> {
        q_pm_with(
            policy,
            &self.rl_test_instructions(),
            &self.world.oracle,
            &self.config.qpm,
            1,
        )
    }

    /// Removed set of a uniformly random selection of `fraction` of `corpus`.
    pub fn random_selection(
        &self,
        corpus: &RlCorpus,
        fraction: f64,
        seed: u64,
    ) -> Result<crate::pipeline::SelectionResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: HashMap<String, f64> = corpus
            .ids()
            .into_iter()
            .map(|id| (id, rng.gen::<f64>()))
            .collect();
        select_by_scores(&scores, fraction, &corpus.fingerprint()?)
    }
}

/// Mean normalized log-likelihood of each variant's probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodOrdering {
    pub samples: usize,
    /// Variant → mean per-probe normalized log-likelihood.
    pub mean_norm_loglik: BTreeMap<String, f64>,
    pub probes: BTreeMap<String, usize>,
}

/// Scores the first `n` RL training samples under all three variants.
pub fn likelihood_ordering(lab: &Lab, n: usize) -> Result<LikelihoodOrdering> {
    let n = n.min(lab.rl_train.len());
    let ids: HashSet<String> = lab.rl_train.ids().into_iter().take(n).collect();
    let corpus = lab.rl_train.retain_ids(|id| ids.contains(id));
    let report = lab.score(&lab.policy, &lab.reward, &corpus, &Variant::ALL)?;
    let mut mean = BTreeMap::new();
    let mut count = BTreeMap::new();
    for v in Variant::ALL {
        let vals: Vec<f64> = report
            .records_for(v)
            .flat_map(|r| r.probe_scores.iter().map(|p| p.norm_loglik))
            .collect();
        if vals.is_empty() {
            return Err(SeamError::Data(format!("no {v} probes were scored")));
        }
        mean.insert(v.to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
        count.insert(v.to_string(), vals.len());
    }
    Ok(LikelihoodOrdering {
        samples: n,
        mean_norm_loglik: mean,
        probes: count,
    })
}

/// Post-RL quality after SEAM filtering, random removal, and no removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LessIsMore {
    pub fraction: f64,
    pub q_sft: f64,
    pub q_full: f64,
    pub q_seam: f64,
    pub q_random: f64,
    /// Share of planted training ids removed by the SEAM filter.
    pub planted_recall: f64,
}

impl LessIsMore {
    pub fn seam_gain(&self) -> f64 {
        self.q_seam - self.q_full
    }

    pub fn random_gain(&self) -> f64 {
        self.q_random - self.q_full
    }
}

fn recall(planted: &[String], removed: &[String]) -> f64 {
    if planted.is_empty() {
        return 0.0;
    }
    let r: HashSet<&String> = removed.iter().collect();
    planted.iter().filter(|id| r.contains(id)).count() as f64 / planted.len() as f64
}

/// Adversarial-variant SEAM report on the RL training split.
pub fn adversarial_report(lab: &Lab) -> Result<SeamReport> {
    lab.score(
        &lab.policy,
        &lab.reward,
        &lab.rl_train,
        &[Variant::Adversarial],
    )
}

pub fn less_is_more(lab: &Lab) -> Result<LessIsMore> {
    let report = adversarial_report(lab)?;
    let f = lab.config.filter_fraction;
    let (seam_corpus, sel) = filter_bottom(
        &report,
        &lab.rl_train,
        f,
        Variant::Adversarial,
        lab.config.mode,
    )?;
    let random = lab.random_selection(
        &lab.rl_train,
        f,
        util::derive_seed(lab.config.rl.seed, &[99]),
    )?;
    let removed: HashSet<&String> = random.removed.iter().collect();
    let random_corpus = lab
        .rl_train
        .retain_ids(|id| !removed.contains(&id.to_string()));
    let corpora = [lab.rl_train.clone(), seam_corpus, random_corpus];
    let q = par::map_ordered(&corpora, lab.config.workers(), |_, c| {
        lab.improve(c).and_then(|p| lab.q_pm(&p))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(LessIsMore {
        fraction: f,
        q_sft: lab.q_pm(&lab.policy)?,
        q_full: q[0],
        q_seam: q[1],
        q_random: q[2],
        planted_recall: recall(&lab.planted_train(), &sel.removed),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub q_pm: f64,
}

/// Post-RL Q_PM after removing each fraction of the riskiest samples
/// (adversarial variant). Fraction 0 is the unfiltered baseline.
pub fn filter_sweep(lab: &Lab, fractions: &[f64]) -> Result<Vec<SweepPoint>> {
    let report = adversarial_report(lab)?;
    let mut corpora = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if f == 0.0 {
            corpora.push(lab.rl_train.clone());
        } else {
            corpora.push(
                filter_bottom(
                    &report,
                    &lab.rl_train,
                    f,
                    Variant::Adversarial,
                    lab.config.mode,
                )?
                .0,
            );
        }
    }
    let q = par::map_ordered(&corpora, lab.config.workers(), |_, c| {
        lab.improve(c).and_then(|p| lab.q_pm(&p))
    });
    fractions
        .iter()
        .zip(q)
        .map(|(&fraction, q)| Ok(SweepPoint { fraction, q_pm: q? }))
        .collect()
}

/// Share of planted training ids inside the bottom `filter_fraction`.
pub fn planted_recall(lab: &Lab) -> Result<f64> {
    let report = adversarial_report(lab)?;
    let sel = select(
        &report,
        lab.config.filter_fraction,
        Variant::Adversarial,
        lab.config.mode,
    )?;
    Ok(recall(&lab.planted_train(), &sel.removed))
}

/// A/B mismatch between the lab reward and the oracle, comparing the SFT
/// policy with the policy improved on the full RL training split.
pub fn mismatch_experiment(lab: &Lab) -> Result<MismatchResult> {
    let improved = lab.improve(&lab.rl_train)?;
    let test = lab.rl_test_instructions();
    mismatch_rate(
        &lab.policy,
        &improved,
        &lab.reward,
        &lab.world.oracle,
        &test,
        test.len(),
        &lab.config.qpm,
    )
}

/// Metric × dataset-role grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValGrid {
    pub metrics: Vec<String>,
    pub roles: Vec<String>,
    /// `values[m][r]`.
    pub values: Vec<Vec<f64>>,
}

impl CrossValGrid {
    /// Max minus min across roles, per metric.
    pub fn spread(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| {
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{}\n", self.roles.join(","));
        for (m, row) in self.metrics.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&format!("{m},{}\n", cells.join(",")));
        }
        out
    }
}

/// Q_PM on the test instructions of each role and Q_RM on golden-vs-corrupted
/// pairs from the SFT and RL test splits and on the preference test split.
pub fn cross_validate(
    lab: &Lab,
    policy: &dyn PolicyBackend,
    reward: &dyn RewardBackend,
) -> Result<CrossValGrid> {
    let oracle = &lab.world.oracle;
    let qc = &lab.config.qpm;
    let w = lab.config.workers();
    let sft_i: Vec<Instruction> = lab
        .sft_test
        .records()
        .iter()
        .map(|r| r.instruction.clone())
        .collect();
    let pref_i: Vec<Instruction> = lab
        .pref_test
        .records()
        .iter()
        .map(|r| r.instruction.clone())
        .collect();
    let rl_i = lab.rl_test_instructions();
    let seed = util::derive_seed(lab.config.world.seed, &[30]);
    let sft_pairs = lab.world.corrupted_pairs(
        lab.sft_test
            .records()
            .iter()
            .map(|r| (&r.instruction, &r.golden)),
        seed,
    )?;
    let rl_pairs = lab.world.corrupted_pairs(
        lab.rl_test
            .records()
            .iter()
            .map(|r| (&r.instruction, &r.golden)),
        seed ^ 1,
    )?;
    Ok(CrossValGrid {
        metrics: vec!["q_pm".into(), "q_rm".into()],
        roles: vec!["d_p".into(), "d_r".into(), "d_rl".into()],
        values: vec![
            vec![
                q_pm_with(policy, &sft_i, oracle, qc, w)?,
                q_pm_with(policy, &pref_i, oracle, qc, w)?,
                q_pm_with(policy, &rl_i, oracle, qc, w)?,
            ],
            vec![
                q_rm(reward, &sft_pairs)?,
                q_rm(reward, &lab.pref_test)?,
                q_rm(reward, &rl_pairs)?,
            ],
        ],
    })
}

/// Policies and rewards trained on nested prefixes of shuffled training data.
#[derive(Debug, Clone)]
pub struct QualityLadder {
    pub pm_rungs: Vec<(usize, NgramPolicy)>,
    pub rm_rungs: Vec<(usize, LinearReward)>,
}

fn check_sizes(sizes: &[usize], available: usize, what: &str) -> Result<()> {
    if sizes.is_empty() {
        return Err(SeamError::Config(format!("{what} ladder is empty")));
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SeamError::Config(format!(
            "{what} ladder sizes must be positive and strictly increasing: {sizes:?}"
        )));
    }
    if *sizes.last().expect("nonempty") > available {
        return Err(SeamError::Config(format!(
            "{what} ladder needs {} records but only {available} are available",
            sizes.last().expect("nonempty")
        )));
    }
    Ok(())
}

fn nested<T: Record>(corpus: &Corpus<T>, sizes: &[usize], seed: u64) -> Result<Vec<Corpus<T>>> {
    let mut recs = corpus.records().to_vec();
    recs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    sizes
        .iter()
        .map(|&n| Corpus::new(recs[..n].to_vec()))
        .collect()
}

impl QualityLadder {
    pub fn build(lab: &Lab, pm_sizes: &[usize], rm_sizes: &[usize]) -> Result<Self> {
        check_sizes(pm_sizes, lab.sft_train.len(), "policy")?;
        check_sizes(rm_sizes, lab.pref_train.len(), "reward")?;
        let seed = util::derive_seed(lab.config.world.seed, &[40]);
        let cfg = &lab.config;
        let pm = nested(&lab.sft_train, pm_sizes, seed)?;
        let rm = nested(&lab.pref_train, rm_sizes, seed ^ 1)?;
        let pm_rungs = par::map_ordered(&pm, cfg.workers(), |_, c| {
            train_policy(c, cfg.policy_order, cfg.discount)
        })
        .into_iter()
        .zip(pm_sizes)
        .map(|(p, &n)| p.map(|p| (n, p)))
        .collect::<Result<Vec<_>>>()?;
        let rm_rungs = par::map_ordered(&rm, cfg.workers(), |_, c| train_reward(c, &cfg.reward))
            .into_iter()
            .zip(rm_sizes)
            .map(|(r, &n)| r.map(|r| (n, r)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pm_rungs, rm_rungs })
    }

    pub fn pm_sizes(&self) -> Vec<usize> {
        self.pm_rungs.iter().map(|r| r.0).collect()
    }

    pub fn rm_sizes(&self) -> Vec<usize> {
        self.rm_rungs.iter().map(|r| r.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationGrid {
    pub pm_sizes: Vec<usize>,
    pub rm_sizes: Vec<usize>,
    /// Pre-RL Q_PM per policy rung.
    pub pm_quality: Vec<f64>,
    /// Q_RM on the preference test split per reward rung.
    pub rm_quality: Vec<f64>,
    /// `cells[i][j]`: post-RL Q_PM of policy rung `i` trained against reward rung `j`.
    pub cells: Vec<Vec<f64>>,
}

impl SaturationGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pm_size,rm_size,pm_quality,rm_quality,post_rl_q_pm\n");
        for (i, &p) in self.pm_sizes.iter().enumerate() {
            for (j, &r) in self.rm_sizes.iter().enumerate() {
                out.push_str(&format!(
                    "{p},{r},{},{},{}\n",
                    self.pm_quality[i], self.rm_quality[j], self.cells[i][j]
                ));
            }
        }
        out
    }
}

/// Runs RL for every (policy rung, reward rung) pairing on the RL training
/// split. Cells run concurrently, each single-threaded.
pub fn saturation_sweep(lab: &Lab, ladder: &QualityLadder) -> Result<SaturationGrid> {
    let pairs: Vec<(usize, usize)> = (0..ladder.pm_rungs.len())
        .flat_map(|i| (0..ladder.rm_rungs.len()).map(move |j| (i, j)))
        .collect();
    let flat = par::map_ordered(&pairs, lab.config.workers(), |_, &(i, j)| {
        let p = rl_improve_with(
            &ladder.pm_rungs[i].1,
            &ladder.rm_rungs[j].1,
            &lab.rl_train,
            &lab.config.rl,
            1,
        )?;
        lab.q_pm(&p)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let m = ladder.rm_rungs.len();
    Ok(SaturationGrid {
        pm_sizes: ladder.pm_sizes(),
        rm_sizes: ladder.rm_sizes(),
        pm_quality: ladder
            .pm_rungs
            .iter()
            .map(|(_, p)| lab.q_pm(p))
            .collect::<Result<_>>()?,
        rm_quality: ladder
            .rm_rungs
            .iter()
            .map(|(_, r)| q_rm(r, &lab.pref_test))
            .collect::<Result<_>>()?,
        cells: flat.chunks(m).map(<[f64]>::to_vec).collect(),
    })
}

/// Overlap of bottom-`filter_fraction` selections from two reward rungs,
/// against the mean overlap of random selections of the same size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    pub rm_sizes: (usize, usize),
    pub rung_overlap: f64,
    pub random_overlap: f64,
    pub random_draws: usize,
}

pub fn overlap_experiment(
    lab: &Lab,
    rm_sizes: (usize, usize),
    random_draws: usize,
) -> Result<OverlapResult> {
    let ladder = QualityLadder::build(lab, &[lab.sft_train.len()], &[rm_sizes.0, rm_sizes.1])?;
    let f = lab.config.filter_fraction;
    let mut sels = Vec::new();
    for (_, r) in &ladder.rm_rungs {
        let report = lab.score(&lab.policy, r, &lab.rl_train, &[Variant::Adversarial])?;
        sels.push(select(&report, f, Variant::Adversarial, lab.config.mode)?);
    }
    let rung_overlap = overlap_rate(&sels[0], &sels[1])?;
    if random_draws == 0 {
        return Err(SeamError::Config("random_draws must be at least 1".into()));
    }
    let base = util::derive_seed(lab.config.world.seed, &[50]);
    let mut sum = 0.0;
    for d in 0..random_draws as u64 {
        let a = lab.random_selection(&lab.rl_train, f, util::derive_seed(base, &[d, 0]))?;
        let b = lab.random_selection(&lab.rl_train, f, util::derive_seed(base, &[d, 1]))?;
        sum += overlap_rate(&a, &b)?;
    }
    Ok(OverlapResult {
        rm_sizes,
        rung_overlap,
        random_overlap: sum / random_draws as f64,
        random_draws,
    })
}

/// Q_RM on held-out planted pairs before and after reward retraining with
/// SEAM-targeted versus randomly targeted augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationResult {
    pub targets: usize,
    pub targeted_pairs: usize,
    pub random_pairs: usize,
    pub q_base: f64,
    pub q_targeted: f64,
    pub q_random: f64,
}

impl AugmentationResult {
    pub fn gain(&self) -> f64 {
        self.q_targeted - self.q_random
    }
}

pub fn augmentation_experiment(
    lab: &Lab,
    cfg: &AugmentConfig,
    probe_pairs: usize,
) -> Result<AugmentationResult> {
    let report = adversarial_report(lab)?;
    let f = lab.config.filter_fraction;
    let targets = select_augmentation_targets(&report, f, Variant::Adversarial, lab.config.mode)?;
    let random = lab
        .random_selection(
            &lab.rl_train,
            f,
            util::derive_seed(lab.config.rl.seed, &[98]),
        )?
        .removed;
    let index = ContrastIndex::build(&lab.sft_train, &lab.embedding, lab.config.workers())?;
    let probe = lab
        .world
        .planted_pairs(probe_pairs, util::derive_seed(lab.config.world.seed, &[60]))?;
    let retrain = |targets: &[String]| -> Result<(usize, f64)> {
        let sets = build_augmentation_sets(targets, &lab.rl_train, &index, &lab.embedding, cfg)?;
        let n = sets.rm_additions.len();
        let mut recs = lab.pref_train.records().to_vec();
        recs.extend(sets.rm_additions);
        let r = train_reward(&PreferenceCorpus::new(recs)?, &lab.config.reward)?;
        Ok((n, q_rm(&r, &probe)?))
    };
    let (targeted_pairs, q_targeted) = retrain(&targets)?;
    let (random_pairs, q_random) = retrain(&random)?;
    Ok(AugmentationResult {
        targets: targets.len(),
        targeted_pairs,
        random_pairs,
        q_base: q_rm(&lab.reward, &probe)?,
        q_targeted,
        q_random,
    })
}
