//! Scoring backends: the policy (response log-likelihoods and sampling), the
//! reward model (scalar score of an instruction/response concatenation) and
//! the text embedder used for retrieval.
//!
//! Local toy implementations live in [`policy`], [`reward`] and
//! [`embedding`]; [`remote`] forwards the same contracts to a JSON/HTTP model
//! server.

pub mod embedding;
pub mod policy;
pub mod remote;
pub mod reward;

use crate::corpus::{Instruction, Response};
use crate::error::{Result, SeamError};

pub use embedding::{cosine, HashEmbedding};
pub use policy::{train_policy, NgramPolicy, UniformPolicy};
pub use remote::{
    RemoteClient, RemoteConfig, RemoteEmbedding, RemoteGenerator, RemotePolicy, RemoteReward,
};
pub use reward::{train_reward, LinearReward, RewardTrainConfig};

/// Unknown-token marker. Private-use code points survive tokenization as a
/// single token, so reserved markers never collide with corpus words.
pub const UNK: &str = "\u{e000}";
/// Separator between instruction and response in joint encodings.
pub const SEP: &str = "\u{e001}";
/// End-of-response marker.
pub const EOS: &str = "\u{e002}";

/// Version tag written into every persisted model file.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Per-token log-probabilities of a response, end marker included.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbs {
    pub per_token: Vec<f64>,
    pub total: f64,
}

impl LogProbs {
    pub fn from_per_token(per_token: Vec<f64>) -> Self {
        let total = per_token.iter().sum();
        Self { per_token, total }
    }
}

/// The policy model: conditional log-likelihood of a response and seeded
/// ancestral sampling.
pub trait PolicyBackend: Send + Sync {
    fn logprob(&self, instruction: &Instruction, response: &Response) -> Result<LogProbs>;
    fn sample(&self, instruction: &Instruction, seed: u64, max_len: usize) -> Result<Response>;
    /// Content hash identifying the model state.
    fn fingerprint(&self) -> String;
}

/// The reward model: a deterministic scalar per (instruction, response).
pub trait RewardBackend: Send + Sync {
    fn score(&self, instruction: &Instruction, response: &Response) -> Result<f64>;
    fn fingerprint(&self) -> String;
}

/// Fixed-dimension text embedder.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    fn dim(&self) -> usize;
    fn fingerprint(&self) -> String;
}

impl<T: PolicyBackend + ?Sized> PolicyBackend for &T {
    fn logprob(&self, i: &Instruction, r: &Response) -> Result<LogProbs> {
        (**self).logprob(i, r)
    }
    fn sample(&self, i: &Instruction, seed: u64, max_len: usize) -> Result<Response> {
        (**self).sample(i, seed, max_len)
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

impl<T: RewardBackend + ?Sized> RewardBackend for &T {
    fn score(&self, i: &Instruction, r: &Response) -> Result<f64> {
        (**self).score(i, r)
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

/// Log-probability of `response` under `policy`, checked against the backend
/// contract (non-empty response, finite non-positive terms, additive total).
pub fn policy_logprob(
    policy: &dyn PolicyBackend,
    instruction: &Instruction,
    response: &Response,
) -> Result<LogProbs> {
    if response.tokens.is_empty() {
        return Err(SeamError::Data(format!(
            "empty response for instruction `{}`",
            instruction.id
        )));
    }
    let lp = policy.logprob(instruction, response)?;
    if lp.per_token.iter().any(|x| !x.is_finite() || *x > 0.0) || !lp.total.is_finite() {
        return Err(SeamError::Backend(
            "policy returned non-finite or positive log-probabilities".into(),
        ));
    }
    Ok(lp)
}

/// Seeded response sample from `policy`.
pub fn policy_sample(
    policy: &dyn PolicyBackend,
    instruction: &Instruction,
    seed: u64,
    max_len: usize,
) -> Result<Response> {
    if max_len == 0 {
        return Err(SeamError::Config("max_len must be at least 1".into()));
    }
    policy.sample(instruction, seed, max_len)
}

pub fn reward_score(
    reward: &dyn RewardBackend,
    instruction: &Instruction,
    response: &Response,
) -> Result<f64> {
    let s = reward.score(instruction, response)?;
    if !s.is_finite() {
        return Err(SeamError::Backend(
            "reward returned a non-finite score".into(),
        ));
    }
    Ok(s)
}

pub fn embed(embedding: &dyn EmbeddingBackend, text: &str) -> Result<Vec<f64>> {
    embedding.embed(text)
}

/// Tagged on-disk model file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    NgramPolicy(policy::NgramPolicyFile),
    LinearReward(reward::LinearRewardFile),
}

impl ModelFile {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::util::write_json_atomic(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SeamError::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| SeamError::Data(format!("{}: {e}", path.display())))?;
        let version = match &file {
            ModelFile::NgramPolicy(p) => p.format_version,
            ModelFile::LinearReward(r) => r.format_version,
        };
        if version != MODEL_FORMAT_VERSION {
            return Err(SeamError::Data(format!(
                "{}: unsupported model format_version {version}",
                path.display()
            )));
        }
        Ok(file)
    }

    pub fn into_policy(self) -> Result<NgramPolicy> {
        match self {
            ModelFile::NgramPolicy(p) => NgramPolicy::from_file(p),
            ModelFile::LinearReward(_) => Err(SeamError::Data(
                "expected a policy model file, found a reward model".into(),
            )),
        }
    }

    pub fn into_reward(self) -> Result<LinearReward> {
        match self {
            ModelFile::LinearReward(r) => LinearReward::from_file(r),
            ModelFile::NgramPolicy(_) => Err(SeamError::Data(
                "expected a reward model file, found a policy model".into(),
            )),
        }
    }
}
