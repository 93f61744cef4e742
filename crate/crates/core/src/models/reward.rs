//! Linear reward model over hashed unigram and bigram features of the joint
//! sequence `instruction ++ SEP ++ response`, trained with the pairwise
//! ranking loss `-log σ(R(I∘r⁺) - R(I∘r⁻))`.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RewardBackend, MODEL_FORMAT_VERSION, SEP};
use crate::corpus::{Instruction, PreferenceCorpus, Response};
use crate::error::{Result, SeamError};
use crate::util;

pub const DEFAULT_REWARD_DIM: usize = 1 << 16;

/// Scores are rounded to multiples of 2^-32. On that grid, adding a constant
/// with few fractional bits and subtracting two scores are exact, so score
/// differences do not depend on a global reward offset.
const SCORE_GRID: f64 = 4_294_967_296.0;

/// Sparse feature vector: sorted `(bucket, value)` pairs.
pub type Features = Vec<(usize, f64)>;

pub(crate) fn unigram_bucket(token: &str, dim: usize) -> usize {
    (util::fnv1a_parts(&[b"u", token.as_bytes()]) as usize) & (dim - 1)
}

pub(crate) fn bigram_bucket(a: &str, b: &str, dim: usize) -> usize {
    (util::fnv1a_parts(&[b"b", a.as_bytes(), b.as_bytes()]) as usize) & (dim - 1)
}

/// ℓ2-normalized hashed bag of unigrams and bigrams of `I ++ SEP ++ r`.
pub fn joint_features(instruction: &Instruction, response: &Response, dim: usize) -> Features {
    let seq: Vec<&str> = instruction
        .tokens
        .iter()
        .chain(std::iter::once(SEP))
        .chain(response.tokens.iter())
        .collect();
    let mut raw: Vec<usize> = Vec::with_capacity(seq.len() * 2);
    raw.extend(seq.iter().map(|t| unigram_bucket(t, dim)));
    raw.extend(seq.windows(2).map(|w| bigram_bucket(w[0], w[1], dim)));
    raw.sort_unstable();
    let mut feats: Features = Vec::with_capacity(raw.len());
    for b in raw {
        match feats.last_mut() {
            Some((last, v)) if *last == b => *v += 1.0,
            _ => feats.push((b, 1.0)),
        }
    }
    let norm = feats.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in feats.iter_mut() {
            *v /= norm;
        }
    }
    feats
}

fn dot(weights: &[f64], feats: &Features) -> f64 {
    feats.iter().map(|(i, v)| weights[*i] * v).sum()
}

fn quantize(x: f64) -> f64 {
    (x * SCORE_GRID).round() / SCORE_GRID
}

#[derive(Debug)]
pub struct LinearReward {
    dim: usize,
    weights: Vec<f64>,
    fingerprint: OnceLock<String>,
}

impl Clone for LinearReward {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            weights: self.weights.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl LinearReward {
    pub fn zeros(dim: usize) -> Result<Self> {
        Self::from_weights(vec![0.0; dim])
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let dim = weights.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(SeamError::Config(format!(
                "reward dimension must be a power of two, got {dim}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(SeamError::Data("non-finite reward weight".into()));
        }
        Ok(Self {
            dim,
            weights,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn features(&self, instruction: &Instruction, response: &Response) -> Features {
        joint_features(instruction, response, self.dim)
    }

    /// Weight of the unigram feature of `token`.
    pub fn unigram_weight(&self, token: &str) -> f64 {
        self.weights[unigram_bucket(token, self.dim)]
    }

    /// Unquantized dot product; used by training and gradient checks.
    pub fn raw_score(&self, instruction: &Instruction, response: &Response) -> f64 {
        dot(&self.weights, &self.features(instruction, response))
    }

    pub fn to_file(&self) -> LinearRewardFile {
        let nonzero = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i, *w))
            .collect();
        LinearRewardFile {
            format_version: MODEL_FORMAT_VERSION,
            dim: self.dim,
            weights: nonzero,
        }
    }

    pub fn from_file(file: LinearRewardFile) -> Result<Self> {
        let mut weights = vec![0.0; file.dim];
        for (i, w) in file.weights {
            *weights
                .get_mut(i)
                .ok_or_else(|| SeamError::Data(format!("weight index {i} out of range")))? = w;
        }
        Self::from_weights(weights)
    }
}

impl RewardBackend for LinearReward {
    fn score(&self, instruction: &Instruction, response: &Response) -> Result<f64> {
        Ok(quantize(self.raw_score(instruction, response)))
    }

    fn fingerprint(&self) -> String {
        self.fingerprint
            .get_or_init(|| util::fingerprint(&self.to_file()).unwrap_or_default())
            .clone()
    }
}

/// Sparse on-disk form: only non-zero weights are stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRewardFile {
    pub format_version: u32,
    pub dim: usize,
    pub weights: Vec<(usize, f64)>,
}

/// `-log σ(x)` computed without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Difference features `f(I∘r⁺) - f(I∘r⁻)` for each pair.
pub fn pair_differences(corpus: &PreferenceCorpus, dim: usize) -> Vec<Features> {
    corpus
        .records()
        .iter()
        .map(|p| {
            let a = joint_features(&p.instruction, &p.preferred, dim);
            let b = joint_features(&p.instruction, &p.rejected, dim);
            merge_sub(&a, &b)
        })
        .collect()
}

fn merge_sub(a: &Features, b: &Features) -> Features {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len() + b.len());
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                let v = x.1 - y.1;
                if v != 0.0 {
                    out.push((x.0, v));
                }
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.0 < y.0 => {
                out.push(*x);
                i += 1;
            }
            (Some(x), None) => {
                out.push(*x);
                i += 1;
            }
            (_, Some(y)) => {
                out.push((y.0, -y.1));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

/// Mean ranking loss over difference vectors.
pub fn ranking_loss(weights: &[f64], diffs: &[Features]) -> f64 {
    if diffs.is_empty() {
        return 0.0;
    }
    diffs
        .iter()
        .map(|d| neg_log_sigmoid(dot(weights, d)))
        .sum::<f64>()
        / diffs.len() as f64
}

/// Dense gradient of [`ranking_loss`].
pub fn ranking_loss_grad(weights: &[f64], diffs: &[Features]) -> Vec<f64> {
    let mut g = vec![0.0; weights.len()];
    if diffs.is_empty() {
        return g;
    }
    let scale = 1.0 / diffs.len() as f64;
    for d in diffs {
        let s = -sigmoid(-dot(weights, d)) * scale;
        for (i, v) in d {
            g[*i] += s * v;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_REWARD_DIM,
            epochs: 20,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Per-pair SGD on the ranking loss with epoch-level backtracking: an epoch
/// that raises the full-batch loss is discarded and the step size halved, so
/// the loss at epoch boundaries never increases.
pub fn train_reward(corpus: &PreferenceCorpus, cfg: &RewardTrainConfig) -> Result<LinearReward> {
    train_reward_with_history(corpus, cfg).map(|(r, _)| r)
}

/// Like [`train_reward`], also returning the full-batch loss at each epoch
/// boundary (index 0 is the initial loss).
pub fn train_reward_with_history(
    corpus: &PreferenceCorpus,
    cfg: &RewardTrainConfig,
) -> Result<(LinearReward, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(SeamError::Data(
            "cannot train a reward model on an empty corpus".into(),
        ));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(SeamError::Config("learning_rate must be positive".into()));
    }
    if cfg.dim == 0 || !cfg.dim.is_power_of_two() {
        return Err(SeamError::Config(
            "reward dim must be a power of two".into(),
        ));
    }
    let diffs = pair_differences(corpus, cfg.dim);
    let mut w = vec![0.0; cfg.dim];
    let mut loss = ranking_loss(&w, &diffs);
    let mut history = vec![loss];
    let mut lr = cfg.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut cand = w.clone();
        for &i in &order {
            let d = &diffs[i];
            let s = sigmoid(-dot(&cand, d));
            for (j, v) in d {
                cand[*j] += lr * s * v;
            }
        }
        let cand_loss = ranking_loss(&cand, &diffs);
        if cand_loss <= loss {
            w = cand;
            loss = cand_loss;
        } else {
            lr *= 0.5;
        }
        history.push(loss);
    }
    Ok((LinearReward::from_weights(w)?, history))
}
