//! Uses of SEAM reports: RL-data filtering, augmentation-target selection,
//! augmentation-set emission, and selection overlap.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{PreferencePair, RlCorpus, SftExample};
use crate::error::{Result, SeamError};
use crate::models::EmbeddingBackend;
use crate::samplers::{ContrastConfig, ContrastIndex, Distinct, Variant};
use crate::seam::{Mode, SeamRecord, SeamReport};
use crate::util;

/// Sample ids ordered most-filterable first.
///
/// Mode `log` sorts ascending (most negative first), mode `prob` descending.
/// Ties break by id. Samples whose scoring failed come last, by id. A report
/// scored in the other mode is reweighted first.
pub fn rank_by_risk(report: &SeamReport, variant: Variant, mode: Mode) -> Result<Vec<String>> {
    if !report.variants.contains(&variant) {
        return Err(SeamError::Data(format!(
            "report has no `{variant}` records"
        )));
    }
    let mut scored: Vec<(String, f64)> = report
        .records_for(variant)
        .map(|r| (r.sample_id.clone(), score_in(r, mode)))
        .collect();
    scored.sort_by(|a, b| {
        let by_score = match mode {
            Mode::Log => a.1.total_cmp(&b.1),
            Mode::Prob => b.1.total_cmp(&a.1),
        };
        by_score.then_with(|| a.0.cmp(&b.0))
    });
    let mut failed: Vec<String> = report
        .failures
        .iter()
        .filter(|f| f.variant == variant)
        .map(|f| f.sample_id.clone())
        .collect();
    failed.sort();
    Ok(scored.into_iter().map(|(id, _)| id).chain(failed).collect())
}

fn score_in(record: &SeamRecord, mode: Mode) -> f64 {
    if record.mode == mode {
        record.score
    } else {
        record.with_mode(mode).score
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    pub fraction: f64,
    pub mode: Mode,
    pub variant: Variant,
    /// Score of the last removed sample, if any was removed and scored.
    pub threshold: Option<f64>,
    pub corpus_fingerprint: String,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SeamError::Config(format!(
            "fraction must be in (0, 1), got {fraction}"
        )));
    }
    Ok(())
}

/// Splits the ranking: the first `round(fraction · N)` ids are removed.
pub fn select(
    report: &SeamReport,
    fraction: f64,
    variant: Variant,
    mode: Mode,
) -> Result<SelectionResult> {
    check_fraction(fraction)?;
    let ranking = rank_by_risk(report, variant, mode)?;
    let n_remove = util::round_half_up(fraction, ranking.len());
    let removed: Vec<String> = ranking[..n_remove].to_vec();
    let threshold = removed.last().and_then(|id| {
        report
            .records_for(variant)
            .find(|r| &r.sample_id == id)
            .map(|r| score_in(r, mode))
    });
    let removed_set: BTreeSet<&String> = removed.iter().collect();
    let mut kept: Vec<String> = ranking
        .iter()
        .filter(|id| !removed_set.contains(id))
        .cloned()
        .collect();
    kept.sort();
    Ok(SelectionResult {
        kept,
        removed,
        fraction,
        mode,
        variant,
        threshold,
        corpus_fingerprint: report.corpus_fingerprint.clone(),
    })
}

/// Removes the riskiest `round(fraction · N)` samples. The filtered corpus
/// keeps the original order.
pub fn filter_bottom(
    report: &SeamReport,
    corpus: &RlCorpus,
    fraction: f64,
    variant: Variant,
    mode: Mode,
) -> Result<(RlCorpus, SelectionResult)> {
    if corpus.fingerprint()? != report.corpus_fingerprint {
        return Err(SeamError::Data(
            "report was computed on a different RL corpus".into(),
        ));
    }
    let sel = select(report, fraction, variant, mode)?;
    if sel.kept.len() + sel.removed.len() != corpus.len() {
        return Err(SeamError::Data(format!(
            "report covers {} samples but the corpus has {}",
            sel.kept.len() + sel.removed.len(),
            corpus.len()
        )));
    }
    let removed: BTreeSet<&str> = sel.removed.iter().map(String::as_str).collect();
    let filtered = corpus.retain_ids(|id| !removed.contains(id));
    Ok((filtered, sel))
}

/// Ids that `filter_bottom` would remove; these are the augmentation targets.
pub fn select_augmentation_targets(
    report: &SeamReport,
    fraction: f64,
    variant: Variant,
    mode: Mode,
) -> Result<Vec<String>> {
    Ok(select(report, fraction, variant, mode)?.removed)
}

/// What the policy-model augmentation adds per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmAugmentation {
    /// `per_target` copies of the target's own (instruction, golden) pair.
    #[default]
    Replicate,
    /// The contrast-retrieved SFT examples themselves.
    Neighbors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub per_target: usize,
    pub pm: PmAugmentation,
    /// Retrieval band; `k` is replaced by `per_target`.
    pub contrast: ContrastConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            per_target: 5,
            pm: PmAugmentation::Replicate,
            contrast: ContrastConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentShortfall {
    pub requested: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSets {
    pub targets: Vec<String>,
    pub pm_additions: Vec<SftExample>,
    pub rm_additions: Vec<PreferencePair>,
    /// Target id → retrieval shortfall.
    pub shortfalls: Vec<(String, AugmentShortfall)>,
}

/// Emits augmentation data for each target.
///
/// Preference additions pair the target's golden response (preferred) with
/// the top contrast-retrieved golden responses (rejected).
pub fn build_augmentation_sets(
    targets: &[String],
    corpus: &RlCorpus,
    index: &ContrastIndex<'_>,
    embedding: &dyn EmbeddingBackend,
    cfg: &AugmentConfig,
) -> Result<AugmentationSets> {
    if cfg.per_target == 0 {
        return Err(SeamError::Config("per_target must be at least 1".into()));
    }
    let retrieval = ContrastConfig {
        k: cfg.per_target,
        ..cfg.contrast
    };
    let mut out = AugmentationSets {
        targets: targets.to_vec(),
        pm_additions: Vec::new(),
        rm_additions: Vec::new(),
        shortfalls: Vec::new(),
    };
    for id in targets {
        let sample = corpus.get(id).ok_or_else(|| {
            SeamError::Data(format!(
                "augmentation target `{id}` is not in the RL corpus"
            ))
        })?;
        let mut seen = Distinct::with(&sample.golden.text);
        let hits = index
            .retrieve(&sample.instruction, embedding, &retrieval, &mut |r| {
                !seen.insert(&r.text)
            })?
            .hits;
        let sft = index.corpus().records();
        for (j, h) in hits.iter().enumerate() {
            out.rm_additions.push(PreferencePair::new(
                format!("{id}#rm{j}"),
                &sample.instruction.text,
                &sample.golden.text,
                &sft[h.index].golden.text,
            )?);
        }
        match cfg.pm {
            PmAugmentation::Replicate => {
                for j in 0..cfg.per_target {
                    out.pm_additions.push(SftExample::new(
                        format!("{id}#pm{j}"),
                        &sample.instruction.text,
                        &sample.golden.text,
                    ));
                }
            }
            PmAugmentation::Neighbors => {
                for (j, h) in hits.iter().enumerate() {
                    let ex = &sft[h.index];
                    out.pm_additions.push(SftExample::new(
                        format!("{id}#pm{j}"),
                        &ex.instruction.text,
                        &ex.golden.text,
                    ));
                }
            }
        }
        if hits.len() < cfg.per_target {
            out.shortfalls.push((
                id.clone(),
                AugmentShortfall {
                    requested: cfg.per_target,
                    produced: hits.len(),
                },
            ));
        }
    }
    Ok(out)
}

/// `|removed_a ∩ removed_b| / min(|removed_a|, |removed_b|)`.
pub fn overlap_rate(a: &SelectionResult, b: &SelectionResult) -> Result<f64> {
    if a.corpus_fingerprint != b.corpus_fingerprint {
        return Err(SeamError::Data(
            "selections were drawn from different corpora".into(),
        ));
    }
    let denom = a.removed.len().min(b.removed.len());
    if denom == 0 {
        return Err(SeamError::Data("overlap of an empty selection".into()));
    }
    let sa: BTreeSet<&String> = a.removed.iter().collect();
    let inter = b.removed.iter().filter(|id| sa.contains(id)).count();
    Ok(inter as f64 / denom as f64)
}

/// Removed-set selection from an arbitrary id → score map (lower = riskier).
/// Used for random and oracle baselines.
pub fn select_by_scores(
    scores: &HashMap<String, f64>,
    fraction: f64,
    corpus_fingerprint: &str,
) -> Result<SelectionResult> {
    check_fraction(fraction)?;
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = util::round_half_up(fraction, ranked.len());
    let removed: Vec<String> = ranked[..n].iter().map(|(id, _)| (*id).clone()).collect();
    let mut kept: Vec<String> = ranked[n..].iter().map(|(id, _)| (*id).clone()).collect();
    kept.sort();
    Ok(SelectionResult {
        threshold: ranked[..n].last().map(|x| x.1),
        kept,
        removed,
        fraction,
        mode: Mode::Log,
        variant: Variant::Contrast,
        corpus_fingerprint: corpus_fingerprint.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seam::SampleFailure;

    fn report(scores: &[(&str, f64)], mode: Mode) -> SeamReport {
        SeamReport {
            mode,
            variants: vec![Variant::Contrast],
            config_fingerprint: "c".into(),
            policy_fingerprint: "p".into(),
            reward_fingerprint: "r".into(),
            corpus_fingerprint: "x".into(),
            records: scores
                .iter()
                .map(|(id, s)| SeamRecord {
                    sample_id: id.to_string(),
                    variant: Variant::Contrast,
                    mode,
                    score: *s,
                    golden_reward: 0.0,
                    probe_scores: vec![],
                    shortfall: None,
                    out_of_band: false,
                    failed_probes: 0,
                })
                .collect(),
            failures: vec![],
        }
    }

    fn sel(removed: &[&str]) -> SelectionResult {
        SelectionResult {
            kept: vec![],
            removed: removed.iter().map(|s| s.to_string()).collect(),
            fraction: 0.5,
            mode: Mode::Log,
            variant: Variant::Contrast,
            threshold: None,
            corpus_fingerprint: "x".into(),
        }
    }

    #[test]
    fn rank_orders_by_mode_and_ties_by_id() {
        let c = Variant::Contrast;
        let r = report(&[("c", 0.0), ("a", -0.5), ("b", -0.1)], Mode::Log);
        assert_eq!(rank_by_risk(&r, c, Mode::Log).unwrap(), vec!["a", "b", "c"]);
        let p = report(&[("c", 0.0), ("a", 0.5), ("b", 0.1)], Mode::Prob);
        assert_eq!(
            rank_by_risk(&p, c, Mode::Prob).unwrap(),
            vec!["a", "b", "c"]
        );
        let t = report(&[("z", -1.0), ("y", -1.0)], Mode::Log);
        assert_eq!(rank_by_risk(&t, c, Mode::Log).unwrap(), vec!["y", "z"]);
    }

    #[test]
    fn targets_match_filter_and_ties_fall_to_id_order() {
        let r = report(&[("d", 0.0), ("b", 0.0), ("c", 0.0), ("a", 0.0)], Mode::Log);
        let t = select_augmentation_targets(&r, 0.5, Variant::Contrast, Mode::Log).unwrap();
        assert_eq!(t, vec!["a", "b"]);
        assert_eq!(
            select(&r, 0.5, Variant::Contrast, Mode::Log)
                .unwrap()
                .removed,
            t
        );
    }

    #[test]
    fn failures_rank_last() {
        let mut r = report(&[("a", -0.5)], Mode::Log);
        r.failures.push(SampleFailure {
            sample_id: "0".into(),
            variant: Variant::Contrast,
            error: "x".into(),
        });
        let ranked = rank_by_risk(&r, Variant::Contrast, Mode::Log).unwrap();
        assert_eq!(ranked.last().unwrap(), "0");
        assert!(rank_by_risk(&r, Variant::Degrade, Mode::Log).is_err());
    }

    #[test]
    fn overlap_examples() {
        let a = sel(&["1", "2", "3", "4", "5"]);
        let b = sel(&["1", "2", "3", "8", "9"]);
        assert!((overlap_rate(&a, &b).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(overlap_rate(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap_rate(&a, &sel(&["6", "7"])).unwrap(), 0.0);
        let mut c = sel(&["1"]);
        c.corpus_fingerprint = "other".into();
        assert!(overlap_rate(&a, &c).is_err());
    }

    #[test]
    fn fraction_bounds() {
        let r = report(&[("a", 0.0)], Mode::Log);
        for f in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(select(&r, f, Variant::Contrast, Mode::Log)
                .unwrap_err()
                .is_config());
        }
    }
}
