//! One function per subcommand. Each writes into its own directory under
//! the output root and returns the paths it produced.

use std::path::{Path, PathBuf};

use seam_core::corpus::{PreferenceCorpus, Response, RlCorpus, SftCorpus};
use seam_core::lab::{
    cross_validate, generate_world, less_is_more, mismatch_experiment, saturation_sweep, Lab,
    QualityLadder,
};
use seam_core::models::{
    train_policy, train_reward, EmbeddingBackend, HashEmbedding, ModelFile, PolicyBackend,
    RemoteEmbedding, RemoteGenerator, RemotePolicy, RemoteReward, RewardBackend,
};
use seam_core::pipeline::{build_augmentation_sets, filter_bottom, select_augmentation_targets};
use seam_core::samplers::{
    ContrastIndex, DegradeGenerator, Edit, Lexicon, Provenance, SynonymSource, Variant,
};
use seam_core::seam::{score_dataset, seam_score, Samplers, ScoreOptions, SeamReport};
use seam_core::{par, util, Result, SeamError};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::output::{csv_text, Output};
use crate::svg::{Chart, Kind, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Policy,
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Saturation,
    Mismatch,
    Crossval,
    LessIsMore,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Saturation => "saturation",
            Experiment::Mismatch => "mismatch",
            Experiment::Crossval => "crossval",
            Experiment::LessIsMore => "less-is-more",
        }
    }
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| SeamError::Config(format!("not a file path: {}", path.display())))
}

fn parent(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let world = generate_world(&cfg.world)?;
    let dir = cfg.paths.world_dir();
    world.save(&dir)?;
    let mut out = Output::new(&dir, "synth", cfg)?;
    for name in [
        "world.json",
        "d_p.jsonl",
        "d_r.jsonl",
        "d_rl.jsonl",
        "lexicon.jsonl",
    ] {
        out.track(name)?;
    }
    out.finish(cfg)
}

pub fn train(cfg: &RunConfig, which: Which) -> Result<Vec<PathBuf>> {
    let (path, file, tag) = match which {
        Which::Policy => {
            let sft = SftCorpus::load(&cfg.paths.sft())?;
            let p = train_policy(&sft, cfg.policy.order, cfg.policy.discount)?;
            (
                cfg.paths.policy_model(),
                ModelFile::NgramPolicy(p.to_file()),
                "train-policy",
            )
        }
        Which::Reward => {
            let pref = PreferenceCorpus::load(&cfg.paths.preference())?;
            if cfg.reward.dim != cfg.world.reward_dim {
                return Err(SeamError::Config(format!(
                    "reward.dim {} differs from world.reward_dim {}",
                    cfg.reward.dim, cfg.world.reward_dim
                )));
            }
            let r = train_reward(&pref, &cfg.reward)?;
            (
                cfg.paths.reward_model(),
                ModelFile::LinearReward(r.to_file()),
                "train-reward",
            )
        }
    };
    file.save(&path)?;
    let mut out = Output::new(parent(&path), tag, cfg)?;
    out.track(&file_name(&path)?)?;
    out.finish(cfg)
}

/// Policy, reward, embedding and optional remote generator for scoring.
struct Backends {
    policy: Box<dyn PolicyBackend>,
    reward: Box<dyn RewardBackend>,
    embedding: Box<dyn EmbeddingBackend>,
    generator: Option<RemoteGenerator>,
}

impl Backends {
    fn open(cfg: &RunConfig) -> Result<Self> {
        let b = &cfg.backends;
        let n = cfg.concurrency;
        let policy: Box<dyn PolicyBackend> = match &b.policy {
            Some(url) => Box::new(RemotePolicy::new(b.remote(url, n))?),
            None => Box::new(ModelFile::load(&cfg.paths.policy_model())?.into_policy()?),
        };
        let reward: Box<dyn RewardBackend> = match &b.reward {
            Some(url) => Box::new(RemoteReward::new(b.remote(url, n))?),
            None => Box::new(ModelFile::load(&cfg.paths.reward_model())?.into_reward()?),
        };
        let embedding: Box<dyn EmbeddingBackend> = match &b.embedding {
            Some(url) => Box::new(RemoteEmbedding::new(b.remote(url, n), cfg.world.embed_dim)?),
            None => Box::new(HashEmbedding::new(cfg.world.embed_dim)?),
        };
        let generator = b
            .generator
            .as_ref()
            .map(|url| RemoteGenerator::new(b.remote(url, n)))
            .transpose()?;
        Ok(Self {
            policy,
            reward,
            embedding,
            generator,
        })
    }
}

/// Everything the probe constructors read besides the backends.
struct Sources {
    rl: RlCorpus,
    sft: Option<SftCorpus>,
    lexicon: Option<Lexicon>,
    pool: Vec<Response>,
}

impl Sources {
    fn load(cfg: &RunConfig, variants: &[Variant], need_sft: bool) -> Result<Self> {
        let rl = RlCorpus::load(&cfg.paths.rl())?;
        let sft = (need_sft || variants.contains(&Variant::Contrast))
            .then(|| SftCorpus::load(&cfg.paths.sft()))
            .transpose()?;
        let lexicon = variants
            .contains(&Variant::Adversarial)
            .then(|| Lexicon::load(&cfg.paths.lexicon()))
            .transpose()?;
        let pool = rl.records().iter().map(|s| s.golden.clone()).collect();
        Ok(Self {
            rl,
            sft,
            lexicon,
            pool,
        })
    }
}

fn samplers<'a>(
    cfg: &RunConfig,
    src: &'a Sources,
    b: &'a Backends,
    index: Option<&'a ContrastIndex<'a>>,
) -> Samplers<'a> {
    let degrade = match &b.generator {
        Some(g) => DegradeGenerator::Remote(g),
        None => DegradeGenerator::Local { pool: &src.pool },
    };
    Samplers {
        config: cfg.sampler.clone(),
        contrast: index.map(|i| (i, b.embedding.as_ref())),
        degrade: Some(degrade),
        synonyms: src.lexicon.as_ref().map(|l| l as &dyn SynonymSource),
    }
}

fn build_index<'a>(
    cfg: &RunConfig,
    src: &'a Sources,
    b: &'a Backends,
) -> Result<Option<ContrastIndex<'a>>> {
    src.sft
        .as_ref()
        .map(|s| ContrastIndex::build(s, b.embedding.as_ref(), cfg.concurrency))
        .transpose()
}

fn run_scoring(
    cfg: &RunConfig,
    src: &Sources,
    b: &Backends,
    variants: &[Variant],
) -> Result<SeamReport> {
    let index = build_index(cfg, src, b)?;
    let s = samplers(cfg, src, b, index.as_ref());
    score_dataset(
        b.policy.as_ref(),
        b.reward.as_ref(),
        &src.rl,
        &s,
        variants,
        cfg.mode,
        &ScoreOptions {
            concurrency: cfg.concurrency,
            strict: cfg.strict_or(false),
            cache_dir: cfg.paths.cache_dir.clone(),
        },
    )
}

pub fn score(cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<PathBuf>> {
    let b = Backends::open(cfg)?;
    let src = Sources::load(cfg, variants, false)?;
    let report = run_scoring(cfg, &src, &b, variants)?;
    let mut out = Output::new(cfg.paths.out_dir.join("score"), "score", cfg)?;
    save_report(&mut out, &report)?;
    out.finish(cfg)
}

fn save_report(out: &mut Output, report: &SeamReport) -> Result<()> {
    let path = out.path("report.jsonl");
    report.save(&path)?;
    out.track("report.jsonl")?;
    out.track(&file_name(&SeamReport::summary_path(&path))?)
}

/// The ranking report for filter/augment: loaded if given, else scored.
fn ranking_report(
    cfg: &RunConfig,
    report: Option<&Path>,
    src: &Sources,
    b: Option<&Backends>,
) -> Result<SeamReport> {
    let variant = cfg.filter.variant;
    let rep = match report {
        Some(p) => SeamReport::load(p)?,
        None => {
            let b = b.ok_or_else(|| SeamError::Config("no report and no backends".into()))?;
            run_scoring(cfg, src, b, &[variant])?
        }
    };
    if !rep.variants.contains(&variant) {
        return Err(SeamError::Data(format!(
            "report has no `{variant}` scores (variants: {:?})",
            rep.variants
        )));
    }
    Ok(rep.with_mode(cfg.mode))
}

pub fn filter(cfg: &RunConfig, report: Option<&Path>) -> Result<Vec<PathBuf>> {
    let v = [cfg.filter.variant];
    let src = Sources::load(cfg, &v, false)?;
    let b = report.is_none().then(|| Backends::open(cfg)).transpose()?;
    let rep = ranking_report(cfg, report, &src, b.as_ref())?;
    let (filtered, sel) = filter_bottom(
        &rep,
        &src.rl,
        cfg.filter.fraction,
        cfg.filter.variant,
        cfg.mode,
    )?;
    let mut out = Output::new(cfg.paths.out_dir.join("filter"), "filter", cfg)?;
    if report.is_none() {
        save_report(&mut out, &rep)?;
    }
    out.bytes("d_rl.filtered.jsonl", filtered.to_jsonl()?.as_bytes())?;
    out.json("selection.json", "selection", &sel)?;
    out.finish(cfg)
}

#[derive(Serialize)]
struct TargetsDoc<'a> {
    variant: Variant,
    fraction: f64,
    targets: &'a [String],
    pm_additions: usize,
    rm_additions: usize,
    shortfalls: Vec<Value>,
}

pub fn augment(cfg: &RunConfig, report: Option<&Path>) -> Result<Vec<PathBuf>> {
    let v = [cfg.filter.variant];
    let src = Sources::load(cfg, &v, true)?;
    let b = Backends::open(cfg)?;
    let rep = ranking_report(cfg, report, &src, Some(&b))?;
    let targets =
        select_augmentation_targets(&rep, cfg.filter.fraction, cfg.filter.variant, cfg.mode)?;
    let index = build_index(cfg, &src, &b)?.expect("SFT corpus loaded");
    let sets = build_augmentation_sets(
        &targets,
        &src.rl,
        &index,
        b.embedding.as_ref(),
        &cfg.augment,
    )?;
    let mut out = Output::new(cfg.paths.out_dir.join("augment"), "augment", cfg)?;
    if report.is_none() {
        save_report(&mut out, &rep)?;
    }
    let pm = SftCorpus::new(sets.pm_additions.clone())?;
    let rm = PreferenceCorpus::new(sets.rm_additions.clone())?;
    out.bytes("pm_additions.jsonl", pm.to_jsonl()?.as_bytes())?;
    out.bytes("rm_additions.jsonl", rm.to_jsonl()?.as_bytes())?;
    let doc = TargetsDoc {
        variant: cfg.filter.variant,
        fraction: cfg.filter.fraction,
        targets: &sets.targets,
        pm_additions: pm.len(),
        rm_additions: rm.len(),
        shortfalls: sets
            .shortfalls
            .iter()
            .map(|(id, s)| serde_json::json!({"id": id, "requested": s.requested, "produced": s.produced}))
            .collect(),
    };
    out.json("targets.json", "augmentation", &doc)?;
    out.finish(cfg)
}

#[derive(Debug, Serialize)]
struct ProbeEntry {
    text: String,
    reward: f64,
    epsilon: f64,
    norm_loglik: f64,
    edits: Vec<Edit>,
    forced: bool,
}

#[derive(Debug, Serialize)]
struct ProbeSample {
    sample_id: String,
    golden_reward: f64,
    /// Some probe out-scored the golden response.
    success: bool,
    max_epsilon: f64,
    mean_epsilon: f64,
    seam_score: f64,
    probes: Vec<ProbeEntry>,
}

#[derive(Debug, Serialize)]
struct ProbeFailure {
    sample_id: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct ProbeReport {
    samples: usize,
    attack_success_rate: f64,
    /// Mean over samples of the per-sample mean misjudgment.
    mean_epsilon: f64,
    failures: Vec<ProbeFailure>,
    per_sample: Vec<ProbeSample>,
}

pub fn probe(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let v = [Variant::Adversarial];
    let b = Backends::open(cfg)?;
    let src = Sources::load(cfg, &v, false)?;
    let s = samplers(cfg, &src, &b, None);
    let strict = cfg.strict_or(false);
    let rows = par::map_ordered(
        src.rl.records(),
        cfg.concurrency,
        |_, sample| -> Result<ProbeSample> {
            let set = s.build(sample, Variant::Adversarial, b.reward.as_ref())?;
            let rec = seam_score(b.policy.as_ref(), b.reward.as_ref(), sample, &set, cfg.mode)?;
            let eps: Vec<f64> = rec.probe_scores.iter().map(|p| p.epsilon).collect();
            let probes = rec
                .probe_scores
                .iter()
                .map(|p| {
                    let (edits, forced) = match &set.probes[p.probe].provenance {
                        Provenance::Adversarial { edits, forced, .. } => (edits.clone(), *forced),
                        _ => (Vec::new(), false),
                    };
                    ProbeEntry {
                        text: p.text.clone(),
                        reward: p.reward,
                        epsilon: p.epsilon,
                        norm_loglik: p.norm_loglik,
                        edits,
                        forced,
                    }
                })
                .collect();
            Ok(ProbeSample {
                sample_id: rec.sample_id.clone(),
                golden_reward: rec.golden_reward,
                success: eps.iter().any(|&e| e > 0.0),
                max_epsilon: eps.iter().copied().fold(0.0, f64::max),
                mean_epsilon: if eps.is_empty() {
                    0.0
                } else {
                    eps.iter().sum::<f64>() / eps.len() as f64
                },
                seam_score: rec.score,
                probes,
            })
        },
    );
    let mut per_sample = Vec::new();
    let mut failures = Vec::new();
    for (sample, row) in src.rl.records().iter().zip(rows) {
        match row {
            Ok(r) => per_sample.push(r),
            Err(e) if !strict => failures.push(ProbeFailure {
                sample_id: sample.id().to_string(),
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let n = per_sample.len();
    let mean = |f: &dyn Fn(&ProbeSample) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_sample.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let report = ProbeReport {
        samples: n,
        attack_success_rate: mean(&|s| if s.success { 1.0 } else { 0.0 }),
        mean_epsilon: mean(&|s| s.mean_epsilon),
        failures,
        per_sample,
    };
    let mut out = Output::new(cfg.paths.out_dir.join("probe"), "probe", cfg)?;
    out.json("report.json", "probe", &report)?;
    out.finish(cfg)
}

#[derive(Serialize)]
struct LabDoc {
    experiment: &'static str,
    seeds: Vec<u64>,
    results: Vec<Value>,
}

pub fn lab(cfg: &RunConfig, exp: Experiment) -> Result<Vec<PathBuf>> {
    if cfg.strict == Some(false) {
        return Err(SeamError::Config(
            "lab experiments always run strict; drop `--lenient` or `strict = false`".into(),
        ));
    }
    let base = cfg.lab_config();
    let mut results = Vec::new();
    let mut csv_rows: Vec<Vec<String>> = Vec::new();
    let mut decisions = String::new();
    for &seed in &cfg.lab.seeds {
        let lab = Lab::prepare(&base.with_seed(seed))?;
        let s = seed.to_string();
        let value = match exp {
            Experiment::Saturation => {
                let ladder = QualityLadder::build(&lab, &cfg.lab.pm_sizes, &cfg.lab.rm_sizes)?;
                let grid = saturation_sweep(&lab, &ladder)?;
                for (i, pm) in grid.pm_sizes.iter().enumerate() {
                    for (j, rm) in grid.rm_sizes.iter().enumerate() {
                        csv_rows.push(vec![
                            s.clone(),
                            pm.to_string(),
                            rm.to_string(),
                            grid.pm_quality[i].to_string(),
                            grid.rm_quality[j].to_string(),
                            grid.cells[i][j].to_string(),
                        ]);
                    }
                }
                serde_json::to_value(&grid)?
            }
            Experiment::Mismatch => {
                let m = mismatch_experiment(&lab)?;
                csv_rows.push(vec![s.clone(), m.rate.to_string(), m.counted.to_string()]);
                for d in &m.decisions {
                    let mut row = serde_json::to_value(d)?;
                    row["seed"] = Value::from(seed);
                    decisions.push_str(&serde_json::to_string(&row)?);
                    decisions.push('\n');
                }
                serde_json::json!({"rate": m.rate, "counted": m.counted})
            }
            Experiment::Crossval => {
                let g = cross_validate(&lab, &lab.policy, &lab.reward)?;
                for (i, m) in g.metrics.iter().enumerate() {
                    for (j, r) in g.roles.iter().enumerate() {
                        csv_rows.push(vec![
                            s.clone(),
                            m.clone(),
                            r.clone(),
                            g.values[i][j].to_string(),
                        ]);
                    }
                }
                let mut v = serde_json::to_value(&g)?;
                v["spread"] = serde_json::to_value(g.spread())?;
                v
            }
            Experiment::LessIsMore => {
                let r = less_is_more(&lab)?;
                csv_rows.push(vec![
                    s.clone(),
                    r.fraction.to_string(),
                    r.q_sft.to_string(),
                    r.q_full.to_string(),
                    r.q_seam.to_string(),
                    r.q_random.to_string(),
                    r.seam_gain().to_string(),
                    r.random_gain().to_string(),
                    r.planted_recall.to_string(),
                ]);
                serde_json::to_value(&r)?
            }
        };
        let mut value = value;
        value["seed"] = Value::from(seed);
        results.push(value);
    }
    let header: &[&str] = match exp {
        Experiment::Saturation => &[
            "seed",
            "pm_size",
            "rm_size",
            "pm_quality",
            "rm_quality",
            "q_pm_after_rl",
        ],
        Experiment::Mismatch => &["seed", "rate", "counted"],
        Experiment::Crossval => &["seed", "metric", "role", "value"],
        Experiment::LessIsMore => &[
            "seed",
            "fraction",
            "q_sft",
            "q_full",
            "q_seam",
            "q_random",
            "seam_gain",
            "random_gain",
            "planted_recall",
        ],
    };
    let mut out = Output::new(
        cfg.paths.out_dir.join("lab").join(exp.name()),
        &format!("lab-{}", exp.name()),
        cfg,
    )?;
    out.json(
        "results.json",
        "lab",
        &LabDoc {
            experiment: exp.name(),
            seeds: cfg.lab.seeds.clone(),
            results,
        },
    )?;
    out.bytes("results.csv", csv_text(header, csv_rows)?.as_bytes())?;
    if exp == Experiment::Mismatch {
        out.bytes("decisions.jsonl", decisions.as_bytes())?;
    }
    out.finish(cfg)
}

/// CSV text, chart, and a summary entry for one report input.
struct Rendered {
    kind: String,
    csv: String,
    chart: Chart,
    summary: Value,
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn render_seam(report: &SeamReport) -> Result<Rendered> {
    let mut rows = Vec::new();
    let mut series: Vec<Series> = report
        .variants
        .iter()
        .map(|v| Series {
            name: v.to_string(),
            points: Vec::new(),
        })
        .collect();
    for r in &report.records {
        let n = r.probe_scores.len();
        let mean_ll = if n == 0 {
            f64::NAN
        } else {
            r.probe_scores.iter().map(|p| p.norm_loglik).sum::<f64>() / n as f64
        };
        let max_eps = r.probe_scores.iter().map(|p| p.epsilon).fold(0.0, f64::max);
        rows.push(vec![
            r.sample_id.clone(),
            r.variant.to_string(),
            r.score.to_string(),
            r.golden_reward.to_string(),
            n.to_string(),
            mean_ll.to_string(),
            max_eps.to_string(),
        ]);
        if let Some(k) = report.variants.iter().position(|v| *v == r.variant) {
            series[k].points.push((mean_ll, r.score));
        }
    }
    Ok(Rendered {
        kind: "seam-report".into(),
        csv: csv_text(
            &[
                "sample_id",
                "variant",
                "score",
                "golden_reward",
                "probes",
                "mean_norm_loglik",
                "max_epsilon",
            ],
            rows,
        )?,
        chart: Chart {
            title: format!("SEAM score vs probe likelihood ({} mode)", report.mode),
            x_label: "mean normalized log-likelihood of probes".into(),
            y_label: "SEAM score".into(),
            kind: Kind::Scatter,
            series,
        },
        summary: serde_json::to_value(report.summary())?,
    })
}

fn seed_mean(results: &[Value], get: impl Fn(&Value) -> f64) -> f64 {
    results.iter().map(get).sum::<f64>() / results.len().max(1) as f64
}

fn render_lab(doc: &Value, origin: &str) -> Result<Rendered> {
    let bad = || SeamError::Data(format!("{origin}: malformed lab results"));
    let exp = doc["experiment"].as_str().ok_or_else(bad)?;
    let results = doc["results"].as_array().ok_or_else(bad)?;
    if results.is_empty() {
        return Err(bad());
    }
    let seeds: Vec<f64> = results.iter().map(|r| f(&r["seed"])).collect();
    let (csv, chart, summary) = match exp {
        "saturation" => {
            let first = &results[0];
            let pm: Vec<u64> = serde_json::from_value(first["pm_sizes"].clone())?;
            let rm: Vec<u64> = serde_json::from_value(first["rm_sizes"].clone())?;
            let mut rows = Vec::new();
            let mut series = Vec::new();
            let mut grid = Vec::new();
            for (i, p) in pm.iter().enumerate() {
                let mut pts = Vec::new();
                let mut line = Vec::new();
                for (j, r) in rm.iter().enumerate() {
                    let m = seed_mean(results, |v| f(&v["cells"][i][j]));
                    rows.push(vec![p.to_string(), r.to_string(), m.to_string()]);
                    pts.push((*r as f64, m));
                    line.push(m);
                }
                grid.push(line);
                series.push(Series {
                    name: format!("PM n={p}"),
                    points: pts,
                });
            }
            (
                csv_text(&["pm_size", "rm_size", "mean_q_pm_after_rl"], rows)?,
                Chart {
                    title: "Post-RL policy quality by reward-model rung".into(),
                    x_label: "reward-model training pairs".into(),
                    y_label: "Q_PM after RL (seed mean)".into(),
                    kind: Kind::Line,
                    series,
                },
                serde_json::json!({"pm_sizes": pm, "rm_sizes": rm, "mean_cells": grid}),
            )
        }
        "less-is-more" => {
            let keys = ["q_sft", "q_full", "q_seam", "q_random"];
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|r| {
                    std::iter::once(r["seed"].to_string())
                        .chain(keys.iter().map(|k| f(&r[k]).to_string()))
                        .collect()
                })
                .collect();
            let series = keys
                .iter()
                .map(|k| Series {
                    name: k.to_string(),
                    points: seeds
                        .iter()
                        .zip(results)
                        .map(|(s, r)| (*s, f(&r[*k])))
                        .collect(),
                })
                .collect();
            let means: serde_json::Map<String, Value> = keys
                .iter()
                .map(|k| {
                    (
                        format!("mean_{k}"),
                        Value::from(seed_mean(results, |r| f(&r[*k]))),
                    )
                })
                .collect();
            (
                csv_text(&["seed", "q_sft", "q_full", "q_seam", "q_random"], rows)?,
                Chart {
                    title: "Post-RL policy quality by RL data".into(),
                    x_label: "seed".into(),
                    y_label: "Q_PM".into(),
                    kind: Kind::Line,
                    series,
                },
                Value::Object(means),
            )
        }
        "crossval" => {
            let metrics: Vec<String> = serde_json::from_value(results[0]["metrics"].clone())?;
            let roles: Vec<String> = serde_json::from_value(results[0]["roles"].clone())?;
            let mut rows = Vec::new();
            let mut series = Vec::new();
            for (i, m) in metrics.iter().enumerate() {
                let mut pts = Vec::new();
                for (j, r) in roles.iter().enumerate() {
                    let v = seed_mean(results, |x| f(&x["values"][i][j]));
                    rows.push(vec![m.clone(), r.clone(), v.to_string()]);
                    pts.push((j as f64, v));
                }
                series.push(Series {
                    name: m.clone(),
                    points: pts,
                });
            }
            (
                csv_text(&["metric", "role", "mean_value"], rows)?,
                Chart {
                    title: format!("Quality across dataset roles ({})", roles.join(", ")),
                    x_label: "dataset role index".into(),
                    y_label: "metric (seed mean)".into(),
                    kind: Kind::Line,
                    series,
                },
                serde_json::json!({"metrics": metrics, "roles": roles}),
            )
        }
        "mismatch" => {
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|r| {
                    vec![
                        r["seed"].to_string(),
                        f(&r["rate"]).to_string(),
                        r["counted"].to_string(),
                    ]
                })
                .collect();
            (
                csv_text(&["seed", "rate", "counted"], rows)?,
                Chart {
                    title: "Reward/oracle mismatch rate".into(),
                    x_label: "seed".into(),
                    y_label: "mismatch rate".into(),
                    kind: Kind::Scatter,
                    series: vec![Series {
                        name: "rate".into(),
                        points: seeds
                            .iter()
                            .zip(results)
                            .map(|(s, r)| (*s, f(&r["rate"])))
                            .collect(),
                    }],
                },
                serde_json::json!({"mean_rate": seed_mean(results, |r| f(&r["rate"]))}),
            )
        }
        other => {
            return Err(SeamError::Data(format!(
                "{origin}: unknown experiment `{other}`"
            )))
        }
    };
    Ok(Rendered {
        kind: format!("lab-{exp}"),
        csv,
        chart,
        summary,
    })
}

fn render_probe(doc: &Value, origin: &str) -> Result<Rendered> {
    let samples = doc["per_sample"]
        .as_array()
        .ok_or_else(|| SeamError::Data(format!("{origin}: malformed probe report")))?;
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            vec![
                s["sample_id"].as_str().unwrap_or_default().to_string(),
                f(&s["golden_reward"]).to_string(),
                s["success"].to_string(),
                f(&s["max_epsilon"]).to_string(),
                f(&s["mean_epsilon"]).to_string(),
            ]
        })
        .collect();
    Ok(Rendered {
        kind: "probe".into(),
        csv: csv_text(
            &[
                "sample_id",
                "golden_reward",
                "success",
                "max_epsilon",
                "mean_epsilon",
            ],
            rows,
        )?,
        chart: Chart {
            title: "Adversarial misjudgment by golden reward".into(),
            x_label: "golden reward".into(),
            y_label: "max misjudgment".into(),
            kind: Kind::Scatter,
            series: vec![Series {
                name: "samples".into(),
                points: samples
                    .iter()
                    .map(|s| (f(&s["golden_reward"]), f(&s["max_epsilon"])))
                    .collect(),
            }],
        },
        summary: serde_json::json!({
            "samples": doc["samples"],
            "attack_success_rate": doc["attack_success_rate"],
            "mean_epsilon": doc["mean_epsilon"],
        }),
    })
}

fn render(input: &Path) -> Result<Rendered> {
    let origin = input.display().to_string();
    let is_jsonl = input.extension().is_some_and(|e| e == "jsonl");
    if is_jsonl && SeamReport::summary_path(input).exists() {
        return render_seam(&SeamReport::load(input)?);
    }
    let text = std::fs::read_to_string(input).map_err(|e| SeamError::io(input, e))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| SeamError::Data(format!("{origin}: not a report input: {e}")))?;
    match doc["kind"].as_str() {
        Some("lab") => render_lab(&doc, &origin),
        Some("probe") => render_probe(&doc, &origin),
        _ => Err(SeamError::Data(format!(
            "{origin}: expected a score report (.jsonl), lab results.json, or probe report.json"
        ))),
    }
}

pub fn report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(SeamError::Config("report needs at least one input".into()));
    }
    let mut out = Output::new(cfg.paths.out_dir.join("report"), "report", cfg)?;
    let mut entries = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let r = render(input)?;
        let stem = format!("{i:02}-{}", r.kind);
        out.bytes(&format!("{stem}.csv"), r.csv.as_bytes())?;
        out.bytes(&format!("{stem}.svg"), r.chart.render().as_bytes())?;
        let bytes = std::fs::read(input).map_err(|e| SeamError::io(input, e))?;
        entries.push(serde_json::json!({
            "input": file_name(input)?,
            "input_sha256": util::sha256_hex(&bytes),
            "kind": r.kind,
            "csv": format!("{stem}.csv"),
            "chart": format!("{stem}.svg"),
            "summary": r.summary,
        }));
    }
    out.json(
        "summary.json",
        "report",
        &serde_json::json!({ "inputs": entries }),
    )?;
    out.finish(cfg)
}
