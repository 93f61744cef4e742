//! Argument parsing, config assembly, and error reporting.
//!
//! Precedence: defaults, then the config file, then environment variables,
//! then flags. Failures print one JSON object on stderr and exit with 2
//! (configuration), 3 (data), or 4 (backend).

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seam_core::samplers::Variant;
use seam_core::{Result, SeamError};

use crate::commands::{self, Experiment, Which};
use crate::config::{EnvOverrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "seam",
    version,
    about = "Seamlessness scoring between policy and reward models"
)]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file and environment.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker limit; outputs do not depend on it.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Derive every seed from this one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `log` or `prob`.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Abort on the first per-sample failure.
    #[arg(long, global = true, conflicts_with = "lenient")]
    pub strict: bool,
    /// Record per-sample failures and continue.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Share of RL samples to remove or target.
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
    /// Contrast probes per sample.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Degrade and adversarial probes per sample.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Contrast similarity band as `lo,hi`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub band: Option<Vec<f64>>,
    /// Adversarial replacement budget as a fraction of response tokens.
    #[arg(long, global = true)]
    pub attack_budget: Option<f64>,
    /// Directory holding d_p, d_r, d_rl, and lexicon JSONL files.
    #[arg(long, global = true)]
    pub world: Option<PathBuf>,
    /// SFT corpus (JSONL).
    #[arg(long, global = true)]
    pub sft: Option<PathBuf>,
    /// Preference corpus (JSONL).
    #[arg(long, global = true)]
    pub preference: Option<PathBuf>,
    /// RL corpus (JSONL).
    #[arg(long, global = true)]
    pub rl: Option<PathBuf>,
    /// Synonym lexicon (JSONL).
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    /// Trained policy model file.
    #[arg(long, global = true)]
    pub policy_model: Option<PathBuf>,
    /// Trained reward model file.
    #[arg(long, global = true)]
    pub reward_model: Option<PathBuf>,
    /// Probe-set and record cache.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Remote policy service base URL.
    #[arg(long, global = true)]
    pub policy_endpoint: Option<String>,
    /// Remote reward service base URL.
    #[arg(long, global = true)]
    pub reward_endpoint: Option<String>,
    /// Remote embedding service base URL.
    #[arg(long, global = true)]
    pub embedding_endpoint: Option<String>,
    /// Remote worse-response generator base URL.
    #[arg(long, global = true)]
    pub generator_endpoint: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world (corpora, lexicon, grammar).
    Synth,
    /// Train a toy model.
    Train {
        #[arg(value_enum)]
        which: WhichArg,
    },
    /// Score the RL corpus.
    Score {
        #[arg(value_enum, default_value = "all")]
        variant: VariantArg,
    },
    /// Remove the riskiest RL samples.
    Filter {
        /// Existing score report to rank by (scored on the fly otherwise).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build augmentation sets for the riskiest RL samples.
    Augment {
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Adversarial robustness report.
    Probe,
    /// Run a lab experiment on every configured seed.
    Lab {
        #[arg(value_enum)]
        experiment: ExperimentArg,
    },
    /// Summaries, CSV tables, and SVG charts from earlier outputs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WhichArg {
    Policy,
    Reward,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Contrast,
    Degrade,
    Adv,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperimentArg {
    Saturation,
    Mismatch,
    Crossval,
    LessIsMore,
}

impl Flags {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(o) = &self.out {
            cfg.paths.out_dir.clone_from(o);
        }
        if let Some(c) = self.concurrency {
            cfg.concurrency = c;
        }
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse()?;
        }
        if self.strict {
            cfg.strict = Some(true);
        }
        if self.lenient {
            cfg.strict = Some(false);
        }
        if let Some(f) = self.fraction {
            cfg.filter.fraction = f;
        }
        if let Some(k) = self.k {
            cfg.sampler.contrast.k = k;
        }
        if let Some(n) = self.n {
            cfg.sampler.degrade.n = n;
            cfg.sampler.attack.n = n;
        }
        if let Some(b) = &self.band {
            let [lo, hi] = b[..] else {
                return Err(SeamError::Config(format!(
                    "--band takes `lo,hi`, got {b:?}"
                )));
            };
            cfg.sampler.contrast.sim_range = [lo, hi];
        }
        if let Some(b) = self.attack_budget {
            cfg.sampler.attack.max_replace_frac = b;
        }
        let p = &mut cfg.paths;
        for (slot, v) in [
            (&mut p.world_dir, &self.world),
            (&mut p.sft, &self.sft),
            (&mut p.preference, &self.preference),
            (&mut p.rl, &self.rl),
            (&mut p.lexicon, &self.lexicon),
            (&mut p.policy_model, &self.policy_model),
            (&mut p.reward_model, &self.reward_model),
            (&mut p.cache_dir, &self.cache_dir),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        let b = &mut cfg.backends;
        for (slot, v) in [
            (&mut b.policy, &self.policy_endpoint),
            (&mut b.reward, &self.reward_endpoint),
            (&mut b.embedding, &self.embedding_endpoint),
            (&mut b.generator, &self.generator_endpoint),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        Ok(())
    }
}

/// The effective configuration for a parsed command line.
pub fn effective_config(flags: &Flags, env: &EnvOverrides) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(env);
    flags.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli, env: &EnvOverrides) -> Result<Vec<PathBuf>> {
    let cfg = effective_config(&cli.flags, env)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train { which } => commands::train(
            &cfg,
            match which {
                WhichArg::Policy => Which::Policy,
                WhichArg::Reward => Which::Reward,
            },
        ),
        Command::Score { variant } => {
            let vs: Vec<Variant> = match variant {
                VariantArg::Contrast => vec![Variant::Contrast],
                VariantArg::Degrade => vec![Variant::Degrade],
                VariantArg::Adv => vec![Variant::Adversarial],
                VariantArg::All => Variant::ALL.to_vec(),
            };
            commands::score(&cfg, &vs)
        }
        Command::Filter { report } => commands::filter(&cfg, report.as_deref()),
        Command::Augment { report } => commands::augment(&cfg, report.as_deref()),
        Command::Probe => commands::probe(&cfg),
        Command::Lab { experiment } => commands::lab(
            &cfg,
            match experiment {
                ExperimentArg::Saturation => Experiment::Saturation,
                ExperimentArg::Mismatch => Experiment::Mismatch,
                ExperimentArg::Crossval => Experiment::Crossval,
                ExperimentArg::LessIsMore => Experiment::LessIsMore,
            },
        ),
        Command::Report { inputs } => commands::report(&cfg, inputs),
    }
}

/// Exit code for an error: 2 configuration, 4 backend, 3 everything else.
pub fn exit_code(e: &SeamError) -> u8 {
    if e.is_config() {
        2
    } else if e.is_backend() {
        4
    } else {
        3
    }
}

fn kind(code: u8) -> &'static str {
    match code {
        2 => "config",
        4 => "backend",
        _ => "data",
    }
}

fn fail(code: u8, message: &str) -> ExitCode {
    let body = serde_json::json!({
        "error": { "kind": kind(code), "exit_code": code, "message": message }
    });
    eprintln!("{body}");
    ExitCode::from(code)
}

pub fn main<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(2, e.to_string().trim_end()),
    };
    match run(&cli, &EnvOverrides::from_env()) {
        Ok(paths) => {
            let listed: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::json!({ "outputs": listed }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(exit_code(&e), &e.to_string()),
    }
}
