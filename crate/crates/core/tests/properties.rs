//! Property tests over corpora, models, probe constructors, scoring, and
//! selection.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use proptest::prelude::*;
use seam_core::corpus::{tokenize, Instruction, Response, RlCorpus, RlSample};
use seam_core::lab::{Lab, LabConfig, WorldConfig};
use seam_core::models::embedding::cosine;
use seam_core::models::{embed, EmbeddingBackend, RewardBackend};
use seam_core::pipeline::{
    build_augmentation_sets, filter_bottom, overlap_rate, rank_by_risk, select, AugmentConfig,
};
use seam_core::samplers::{
    build_adversarial_set, build_degraded_set, ContrastIndex, DegradeGenerator, Probe, ProbeSet,
    Provenance, Variant,
};
use seam_core::seam::{epsilon, seam_score, Mode, SeamRecord, SeamReport};
use seam_core::util;
use seam_core::Result;

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| {
        let cfg = LabConfig {
            world: WorldConfig {
                n_sft: 300,
                n_pref: 200,
                n_rl: 80,
                ..WorldConfig::default()
            },
            ..LabConfig::default()
        };
        Lab::prepare(&cfg).unwrap()
    })
}

/// A fixed pseudo-random reward on a 1/1024 grid, optionally shifted, with the
/// golden response of a chosen text pinned above everything else.
struct HashReward {
    salt: u64,
    shift: f64,
    pinned: Option<String>,
}

impl RewardBackend for HashReward {
    fn score(&self, i: &Instruction, r: &Response) -> Result<f64> {
        if self.pinned.as_deref() == Some(r.text.as_str()) {
            return Ok(100.0 + self.shift);
        }
        let h = util::fnv1a_parts(&[
            &self.salt.to_le_bytes(),
            i.text.as_bytes(),
            r.text.as_bytes(),
        ]);
        Ok((h % 10_001) as f64 / 1024.0 - 5.0 + self.shift)
    }
    fn fingerprint(&self) -> String {
        format!("hash:{}:{}:{:?}", self.salt, self.shift, self.pinned)
    }
}

fn degrade_set(sample: &RlSample, seed: u64, n: usize) -> ProbeSet {
    let pool: Vec<Response> = lab()
        .world
        .d_rl
        .records()
        .iter()
        .map(|s| s.golden.clone())
        .collect();
    build_degraded_set(sample, &DegradeGenerator::Local { pool: &pool }, n, seed).unwrap()
}

fn sample(i: usize) -> &'static RlSample {
    let recs = lab().rl_train.records();
    &recs[i % recs.len()]
}

fn report_from_scores(scores: &[f64]) -> (RlCorpus, SeamReport) {
    let corpus = RlCorpus::new(
        (0..scores.len())
            .map(|i| RlSample::new(format!("s{i:03}"), "ask", "answer"))
            .collect(),
    )
    .unwrap();
    let records = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| SeamRecord {
            sample_id: format!("s{i:03}"),
            variant: Variant::Degrade,
            mode: Mode::Log,
            score,
            golden_reward: 0.0,
            probe_scores: Vec::new(),
            shortfall: None,
            out_of_band: false,
            failed_probes: 0,
        })
        .collect();
    let report = SeamReport {
        mode: Mode::Log,
        variants: vec![Variant::Degrade],
        config_fingerprint: String::new(),
        policy_fingerprint: String::new(),
        reward_fingerprint: String::new(),
        corpus_fingerprint: corpus.fingerprint().unwrap(),
        records,
        failures: Vec::new(),
    };
    (corpus, report)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tokenizer_is_pure(s in "\\PC{0,40}") {
        prop_assert_eq!(tokenize(&s), tokenize(&s));
    }

    #[test]
    fn corpus_jsonl_round_trip(texts in prop::collection::vec(("[a-zé]{1,8}( [a-z]{1,6}){0,4}", "[a-z]{1,8}( [a-z?!.]{1,6}){0,6}"), 1..20)) {
        let corpus = RlCorpus::new(
            texts.iter().enumerate().map(|(i, (a, b))| RlSample::new(format!("x{i}"), a, b)).collect(),
        ).unwrap();
        let back = RlCorpus::parse(&corpus.to_jsonl().unwrap(), "mem").unwrap();
        prop_assert_eq!(back.records(), corpus.records());
    }

    #[test]
    fn split_is_a_partition(seed in any::<u64>(), a in 1u32..10, b in 1u32..10, c in 1u32..10) {
        let total = (a + b + c) as f64;
        let corpus = &lab().world.d_rl;
        let (x, y, z) = corpus.split((a as f64 / total, b as f64 / total, c as f64 / total), seed).unwrap();
        let mut all: Vec<String> = x.ids();
        all.extend(y.ids());
        all.extend(z.ids());
        prop_assert_eq!(all.len(), corpus.len());
        let uniq: BTreeSet<String> = all.into_iter().collect();
        prop_assert_eq!(uniq, corpus.ids().into_iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn policy_distributions_normalize(i in 0usize..1000, len in 0usize..6, seed in any::<u64>()) {
        let lab = lab();
        let s = sample(i);
        let r = seam_core::models::PolicyBackend::sample(&lab.policy, &s.instruction, seed, 12).unwrap();
        let toks: Vec<&str> = r.tokens.iter().take(len).collect();
        let p = lab.policy.next_token_dist(&s.instruction, &toks);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logprob_total_is_sum_of_terms(i in 0usize..1000, seed in any::<u64>()) {
        let lab = lab();
        let s = sample(i);
        let r = seam_core::models::PolicyBackend::sample(&lab.policy, &s.instruction, seed, 16).unwrap();
        let lp = seam_core::models::PolicyBackend::logprob(&lab.policy, &s.instruction, &r).unwrap();
        prop_assert_eq!(lp.total, lp.per_token.iter().sum::<f64>());
    }

    #[test]
    fn epsilon_is_clamped(g in -1e6f64..1e6, p in -1e6f64..1e6) {
        let e = epsilon(g, p);
        prop_assert!(e >= 0.0);
        prop_assert_eq!(e == 0.0, p <= g);
    }

    #[test]
    fn mode_signs(i in 0usize..1000, salt in any::<u64>(), seed in any::<u64>()) {
        let lab = lab();
        let s = sample(i);
        let set = degrade_set(s, seed, 6);
        let reward = HashReward { salt, shift: 0.0, pinned: None };
        let log = seam_score(&lab.policy, &reward, s, &set, Mode::Log).unwrap();
        let prob = seam_score(&lab.policy, &reward, s, &set, Mode::Prob).unwrap();
        prop_assert!(log.score <= 0.0);
        prop_assert!(prob.score >= 0.0);
    }

    #[test]
    fn golden_on_top_scores_zero(i in 0usize..1000, salt in any::<u64>(), seed in any::<u64>()) {
        let lab = lab();
        let s = sample(i);
        let set = degrade_set(s, seed, 6);
        let reward = HashReward { salt, shift: 0.0, pinned: Some(s.golden.text.clone()) };
        for mode in [Mode::Log, Mode::Prob] {
            prop_assert_eq!(seam_score(&lab.policy, &reward, s, &set, mode).unwrap().score, 0.0);
        }
    }

    #[test]
    fn reward_shift_leaves_scores_unchanged(i in 0usize..1000, salt in any::<u64>(), seed in any::<u64>(), c in prop::sample::select(vec![-100.0, 0.5, 1000.0])) {
        let lab = lab();
        let s = sample(i);
        let set = degrade_set(s, seed, 6);
        let base = HashReward { salt, shift: 0.0, pinned: None };
        let moved = HashReward { salt, shift: c, pinned: None };
        for mode in [Mode::Log, Mode::Prob] {
            let a = seam_score(&lab.policy, &base, s, &set, mode).unwrap();
            let b = seam_score(&lab.policy, &moved, s, &set, mode).unwrap();
            // Grid rewards and these shifts are exact in binary, so scores match bit for bit.
            prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn probe_union_is_additive(i in 0usize..1000, salt in any::<u64>(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let lab = lab();
        let s = sample(i);
        let a = degrade_set(s, s1, 4);
        let b = degrade_set(s, s2, 4);
        let mut probes: Vec<Probe> = a.probes.clone();
        probes.extend(b.probes.iter().cloned());
        let union = ProbeSet { probes, shortfall: None, ..a.clone() };
        let reward = HashReward { salt, shift: 0.0, pinned: None };
        for mode in [Mode::Log, Mode::Prob] {
            let su = seam_score(&lab.policy, &reward, s, &union, mode).unwrap().score;
            let sa = seam_score(&lab.policy, &reward, s, &a, mode).unwrap().score;
            let sb = seam_score(&lab.policy, &reward, s, &b, mode).unwrap().score;
            prop_assert!((su - (sa + sb)).abs() <= 1e-9 * (1.0 + su.abs()));
        }
    }

    #[test]
    fn degraded_probes_are_distinct_and_deterministic(i in 0usize..1000, seed in any::<u64>()) {
        let s = sample(i);
        let set = degrade_set(s, seed, 30);
        let texts: BTreeSet<&str> = set.probes.iter().map(|p| p.response.text.as_str()).collect();
        prop_assert_eq!(texts.len(), set.len());
        prop_assert!(!texts.contains(s.golden.text.as_str()));
        prop_assert_eq!(degrade_set(s, seed, 30), set);
    }

    #[test]
    fn attack_trajectories_never_lose_reward(i in 0usize..1000, seed in any::<u64>()) {
        let lab = lab();
        let s = sample(i);
        let cfg = seam_core::samplers::AttackConfig { n: 12, restarts: 6, ..Default::default() };
        let set = build_adversarial_set(s, &lab.reward, Some(&lab.world.lexicon), &cfg, seed).unwrap();
        prop_assert_eq!(&build_adversarial_set(s, &lab.reward, Some(&lab.world.lexicon), &cfg, seed).unwrap(), &set);
        let mut by_restart: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
        for p in &set.probes {
            if let Provenance::Adversarial { restart, iteration, forced: false, .. } = p.provenance {
                let r = lab.reward.score(&s.instruction, &p.response).unwrap();
                by_restart.entry(restart).or_default().push((iteration, r));
            }
        }
        let golden = lab.reward.score(&s.instruction, &s.golden).unwrap();
        for mut traj in by_restart.into_values() {
            traj.sort_by_key(|t| t.0);
            let mut prev = golden;
            for (_, r) in traj {
                prop_assert!(r >= prev - 1e-12);
                prev = r;
            }
        }
    }

    #[test]
    fn contrast_band_is_sound(i in 0usize..1000) {
        let lab = lab();
        let s = sample(i);
        let index = ContrastIndex::build(&lab.sft_train, &lab.embedding, 1).unwrap();
        let cfg = lab.config.sampler.contrast;
        let set = index.probe_set(s, &lab.embedding, &cfg).unwrap();
        let q = embed(&lab.embedding, &s.instruction.text).unwrap();
        for p in &set.probes {
            let Provenance::Contrast { source_id, similarity, in_band } = &p.provenance else {
                panic!("contrast set holds a foreign probe");
            };
            if *in_band {
                prop_assert!(cfg.sim_range[0] <= *similarity && *similarity <= cfg.sim_range[1]);
            }
            let src = lab.sft_train.get(source_id).unwrap();
            let v = lab.embedding.embed(&src.instruction.text).unwrap();
            prop_assert!((cosine(&q, &v).unwrap() - similarity).abs() < 1e-9);
        }
    }

    #[test]
    fn selection_partitions_and_nests(scores in prop::collection::vec(-50.0f64..0.0, 5..60)) {
        let (corpus, report) = report_from_scores(&scores);
        let ranking = rank_by_risk(&report, Variant::Degrade, Mode::Log).unwrap();
        let mut prev: BTreeSet<String> = BTreeSet::new();
        for f in [0.1, 0.2, 0.3, 0.4, 0.6, 0.8] {
            let (kept, sel) = filter_bottom(&report, &corpus, f, Variant::Degrade, Mode::Log).unwrap();
            let n = util::round_half_up(f, scores.len());
            prop_assert_eq!(&sel.removed[..], &ranking[..n]);
            prop_assert_eq!(kept.len() + sel.removed.len(), corpus.len());
            let removed: BTreeSet<String> = sel.removed.iter().cloned().collect();
            prop_assert!(kept.ids().iter().all(|id| !removed.contains(id)));
            prop_assert!(prev.is_subset(&removed));
            prev = removed;
        }
    }

    #[test]
    fn overlap_is_symmetric_at_equal_sizes(a in prop::collection::vec(-9.0f64..0.0, 10..40), salt in any::<u64>(), f in 0.1f64..0.9) {
        let (_, ra) = report_from_scores(&a);
        let b: Vec<f64> = (0..a.len()).map(|i| -((util::derive_seed(salt, &[i as u64]) % 1000) as f64)).collect();
        let (_, rb) = report_from_scores(&b);
        let sa = select(&ra, f, Variant::Degrade, Mode::Log).unwrap();
        let sb = select(&rb, f, Variant::Degrade, Mode::Log).unwrap();
        prop_assume!(!sa.removed.is_empty());
        prop_assert_eq!(overlap_rate(&sa, &sb).unwrap(), overlap_rate(&sb, &sa).unwrap());
    }
}

#[test]
fn reward_training_does_not_lose_training_accuracy() {
    use seam_core::lab::q_rm;
    use seam_core::models::reward::{train_reward, LinearReward, RewardTrainConfig};
    for seed in 0..3 {
        let world = seam_core::lab::generate_world(&WorldConfig {
            seed,
            n_sft: 100,
            n_pref: 150,
            n_rl: 50,
            ..WorldConfig::default()
        })
        .unwrap();
        let cfg = RewardTrainConfig::default();
        let init = LinearReward::zeros(cfg.dim).unwrap();
        let trained = train_reward(&world.d_r, &cfg).unwrap();
        assert!(q_rm(&trained, &world.d_r).unwrap() >= q_rm(&init, &world.d_r).unwrap());
    }
}

#[test]
fn augmentation_negatives_are_sft_goldens() {
    let lab = lab();
    let index = ContrastIndex::build(&lab.sft_train, &lab.embedding, 1).unwrap();
    let targets: Vec<String> = lab.rl_train.ids().into_iter().take(10).collect();
    let sets = build_augmentation_sets(
        &targets,
        &lab.rl_train,
        &index,
        &lab.embedding,
        &AugmentConfig::default(),
    )
    .unwrap();
    let goldens: BTreeSet<&str> = lab
        .sft_train
        .records()
        .iter()
        .map(|r| r.golden.text.as_str())
        .collect();
    assert!(!sets.rm_additions.is_empty());
    for p in &sets.rm_additions {
        assert!(goldens.contains(p.rejected.text.as_str()));
    }
}
