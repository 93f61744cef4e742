//! Signed feature-hashing embedder and cosine similarity.

use super::EmbeddingBackend;
use crate::corpus::tokenize;
use crate::error::{Result, SeamError};
use crate::util;

pub const DEFAULT_EMBED_DIM: usize = 1024;

/// Bag of unigrams hashed into `dim` signed buckets, ℓ2-normalized.
/// Empty text embeds to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedding {
    dim: usize,
}

impl HashEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_power_of_two() {
            return Err(SeamError::Config(format!(
                "embedding dimension must be a power of two, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    /// Bucket and sign of one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = util::fnv1a_parts(&[b"e", token.as_bytes()]);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h as usize) & (self.dim - 1), sign)
    }
}

impl Default for HashEmbedding {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl EmbeddingBackend for HashEmbedding {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        for t in tokenize(text).iter() {
            let (i, s) = self.slot(t);
            v[i] += s;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hash-embedding:v1:{}", self.dim)
    }
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SeamError::Data(format!(
            "cosine of vectors with different dimensions ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SeamError::Data("cosine of a zero vector".into()));
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}
