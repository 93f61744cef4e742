//! Run configuration: one TOML file, environment overrides, flag overrides.

use std::path::{Path, PathBuf};

use seam_core::lab::{LabConfig, QpmConfig, RlConfig, WorldConfig};
use seam_core::models::remote::RemoteConfig;
use seam_core::models::reward::RewardTrainConfig;
use seam_core::pipeline::AugmentConfig;
use seam_core::samplers::Variant;
use seam_core::seam::{Mode, SamplerConfig};
use seam_core::{util, Result, SeamError};
use serde::{Deserialize, Serialize};

/// Version of the config file format.
pub const FORMAT_VERSION: u32 = 1;

/// Environment variables consulted after the config file and before flags.
pub const ENV_POLICY: &str = "SEAM_POLICY_ENDPOINT";
pub const ENV_REWARD: &str = "SEAM_REWARD_ENDPOINT";
pub const ENV_EMBEDDING: &str = "SEAM_EMBEDDING_ENDPOINT";
pub const ENV_GENERATOR: &str = "SEAM_GENERATOR_ENDPOINT";
pub const ENV_CACHE_DIR: &str = "SEAM_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    /// Bound on worker pools and remote in-flight requests. Never changes results.
    pub concurrency: usize,
    pub mode: Mode,
    /// Abort on the first per-sample failure. Unset: lenient for scoring,
    /// strict for lab experiments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
    pub paths: Paths,
    pub backends: Backends,
    pub world: WorldConfig,
    pub policy: PolicyTrainConfig,
    pub reward: RewardTrainConfig,
    pub sampler: SamplerConfig,
    pub filter: FilterConfig,
    pub augment: AugmentConfig,
    pub rl: RlConfig,
    pub qpm: QpmConfig,
    pub lab: LabSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lab = LabConfig::default();
        Self {
            format_version: FORMAT_VERSION,
            concurrency: 4,
            mode: Mode::Log,
            strict: None,
            paths: Paths::default(),
            backends: Backends::default(),
            world: lab.world,
            policy: PolicyTrainConfig {
                order: lab.policy_order,
                discount: lab.discount,
            },
            reward: lab.reward,
            sampler: lab.sampler,
            filter: FilterConfig::default(),
            augment: AugmentConfig::default(),
            rl: lab.rl,
            qpm: lab.qpm,
            lab: LabSection::default(),
        }
    }
}

/// Input and output locations. Unset inputs resolve under `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sft: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preference: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            world_dir: None,
            sft: None,
            preference: None,
            rl: None,
            lexicon: None,
            policy_model: None,
            reward_model: None,
            cache_dir: None,
        }
    }
}

impl Paths {
    pub fn world_dir(&self) -> PathBuf {
        self.world_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("world"))
    }

    fn in_world(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.world_dir().join(name))
    }

    pub fn sft(&self) -> PathBuf {
        self.in_world(&self.sft, "d_p.jsonl")
    }

    pub fn preference(&self) -> PathBuf {
        self.in_world(&self.preference, "d_r.jsonl")
    }

    pub fn rl(&self) -> PathBuf {
        self.in_world(&self.rl, "d_rl.jsonl")
    }

    pub fn lexicon(&self) -> PathBuf {
        self.in_world(&self.lexicon, "lexicon.jsonl")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn policy_model(&self) -> PathBuf {
        self.policy_model
            .clone()
            .unwrap_or_else(|| self.models_dir().join("policy.json"))
    }

    pub fn reward_model(&self) -> PathBuf {
        self.reward_model
            .clone()
            .unwrap_or_else(|| self.models_dir().join("reward.json"))
    }
}

/// Remote service endpoints; an unset endpoint selects the local model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Backends {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub timeout_ms: u64,
    pub attempts: u32,
    pub retry_backoff_ms: u64,
}

impl Default for Backends {
    fn default() -> Self {
        let r = RemoteConfig::default();
        Self {
            policy: None,
            reward: None,
            embedding: None,
            generator: None,
            timeout_ms: r.timeout_ms,
            attempts: r.attempts,
            retry_backoff_ms: r.retry_backoff_ms,
        }
    }
}

impl Backends {
    pub fn remote(&self, endpoint: &str, max_in_flight: usize) -> RemoteConfig {
        RemoteConfig {
            endpoint: endpoint.to_string(),
            timeout_ms: self.timeout_ms,
            attempts: self.attempts,
            retry_backoff_ms: self.retry_backoff_ms,
            max_in_flight: max_in_flight.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyTrainConfig {
    pub order: usize,
    pub discount: f64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        let lab = LabConfig::default();
        Self {
            order: lab.policy_order,
            discount: lab.discount,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub fraction: f64,
    /// Probe variant whose scores rank the samples.
    pub variant: Variant,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            variant: Variant::Adversarial,
        }
    }
}

/// Knobs used only by `lab` experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabSection {
    /// One full experiment per seed; every other seed is derived from it.
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub pm_sizes: Vec<usize>,
    pub rm_sizes: Vec<usize>,
}

impl Default for LabSection {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            test_fraction: LabConfig::default().test_fraction,
            pm_sizes: vec![100, 200, 400, 800],
            rm_sizes: vec![100, 200, 400, 750],
        }
    }
}

/// Values read from the environment.
#[derive(Debug, Clone, Default)]
pub struct EnvOverrides {
    pub policy: Option<String>,
    pub reward: Option<String>,
    pub embedding: Option<String>,
    pub generator: Option<String>,
    pub cache_dir: Option<PathBuf>,
}

impl EnvOverrides {
    pub fn from_env() -> Self {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            policy: get(ENV_POLICY),
            reward: get(ENV_REWARD),
            embedding: get(ENV_EMBEDDING),
            generator: get(ENV_GENERATOR),
            cache_dir: get(ENV_CACHE_DIR).map(PathBuf::from),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| SeamError::Config(format!("{origin}: {e}")))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(SeamError::Config(format!(
                "{origin}: unsupported format_version {} (expected {FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SeamError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| SeamError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn apply_env(&mut self, env: &EnvOverrides) {
        let b = &mut self.backends;
        for (slot, value) in [
            (&mut b.policy, &env.policy),
            (&mut b.reward, &env.reward),
            (&mut b.embedding, &env.embedding),
            (&mut b.generator, &env.generator),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if env.cache_dir.is_some() {
            self.paths.cache_dir.clone_from(&env.cache_dir);
        }
    }

    /// Points every seeded component at seeds derived from `seed`, and runs
    /// lab experiments on that seed alone.
    pub fn set_seed(&mut self, seed: u64) {
        let derived = self.lab_config().with_seed(seed);
        self.world.seed = derived.world.seed;
        self.reward.seed = derived.reward.seed;
        self.rl.seed = derived.rl.seed;
        self.qpm.seed = derived.qpm.seed;
        self.sampler.seed = derived.sampler.seed;
        self.lab.seeds = vec![seed];
    }

    pub fn lab_config(&self) -> LabConfig {
        LabConfig {
            world: self.world.clone(),
            policy_order: self.policy.order,
            discount: self.policy.discount,
            reward: self.reward,
            rl: self.rl.clone(),
            qpm: self.qpm.clone(),
            sampler: self.sampler.clone(),
            test_fraction: self.lab.test_fraction,
            filter_fraction: self.filter.fraction,
            mode: self.mode,
            concurrency: self.concurrency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(SeamError::Config("concurrency must be at least 1".into()));
        }
        if self.lab.seeds.is_empty() {
            return Err(SeamError::Config("lab.seeds is empty".into()));
        }
        self.sampler.contrast.validate()?;
        self.sampler.attack.validate()?;
        self.lab_config().validate()
    }

    /// Content hash of everything that can influence results. Concurrency
    /// and the output root are excluded: they never change outputs.
    pub fn fingerprint(&self) -> Result<String> {
        let mut c = self.clone();
        c.concurrency = 0;
        c.paths.out_dir = PathBuf::new();
        util::fingerprint(&c)
    }

    pub fn strict_or(&self, default: bool) -> bool {
        self.strict.unwrap_or(default)
    }
}
