use serde::{Deserialize, Serialize};

use crate::model_gateway::transport::{HttpTransport, TransportError};
use crate::text::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding transport: {0}")]
    Transport(#[from] TransportError),
    #[error("embedding provider returned {found} vectors for {expected} texts")]
    Count { expected: usize, found: usize },
    #[error("embedding provider returned dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("embedding provider returned a zero or non-finite vector")]
    Degenerate,
    #[error("embedding response: {0}")]
    Decode(String),
}

/// Source of fixed-dimension, unit-norm text embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub const DEFAULT_DIMENSION: usize = 384;

/// Deterministic feature-hashed character-trigram embedding.
///
/// Each token is padded with `#` on both sides; every trigram is hashed with
/// FNV-1a into a bucket, and one hash bit picks the sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashedEmbedder { dimension }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder::new(DEFAULT_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Scales `v` to unit length in place. Returns false for zero vectors.
pub fn l2_normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl HashedEmbedder {
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let mut add = |gram: &[char]| {
            let s: String = gram.iter().collect();
            let h = fnv1a(s.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            v[bucket] += if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        };
        let tokens = tokenize(text);
        for token in &tokens {
            let padded: Vec<char> = std::iter::once('#').chain(token.chars()).chain(std::iter::once('#')).collect();
            for gram in padded.windows(3) {
                add(gram);
            }
        }
        if !l2_normalize(&mut v) {
            // Empty or fully cancelled input still maps to a fixed unit vector.
            v.iter_mut().for_each(|x| *x = 0.0);
            let bucket = (fnv1a(b"\x00empty") % self.dimension as u64) as usize;
            v[bucket] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.embed_text(text))
    }
}

/// Deterministic fallback embedding with the default dimension.
pub fn fallback_embed(text: &str) -> Vec<f64> {
    HashedEmbedder::default().embed_text(text)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding service reached over HTTP: POST `{"texts":[...]}` returning
/// `{"vectors":[[...]]}`. Returned vectors are re-normalized.
pub struct RemoteEmbedder {
    url: String,
    dimension: usize,
    transport: HttpTransport,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dimension: usize, transport: HttpTransport) -> Self {
        RemoteEmbedder { url: url.into(), dimension, transport }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut v = self.embed_batch(&[text.to_string()])?;
        Ok(v.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let body = serde_json::to_string(&EmbedRequest { texts }).map_err(|e| EmbedError::Decode(e.to_string()))?;
        let reply = self.transport.post_json(&self.url, &body)?;
        let parsed: EmbedResponse = serde_json::from_str(&reply).map_err(|e| EmbedError::Decode(e.to_string()))?;
        if parsed.vectors.len() != texts.len() {
            return Err(EmbedError::Count { expected: texts.len(), found: parsed.vectors.len() });
        }
        parsed
            .vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.dimension {
                    return Err(EmbedError::Dimension { expected: self.dimension, found: v.len() });
                }
                if !l2_normalize(&mut v) {
                    return Err(EmbedError::Degenerate);
                }
                Ok(v)
            })
            .collect()
    }
}
