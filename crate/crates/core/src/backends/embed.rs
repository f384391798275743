//! Hashed bag-of-words sentence embedder.

use super::{Backend, BackendError, DescribeResponse, EmbedRequest, EmbedResponse, SpecialTokens};

/// Lowercased alphanumeric words of `text`.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// L2-normalized signed feature hashing of the words of `text`.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for w in words(text) {
        let h = fnv1a(w.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(64)
    }
}

impl Backend for HashEmbedder {
    fn describe(&self) -> Result<DescribeResponse, BackendError> {
        Ok(DescribeResponse {
            grid_w: 1,
            grid_h: 1,
            embed_dim: self.dim,
            special_tokens: SpecialTokens::default(),
            captions_per_round: 1,
        })
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        Ok(EmbedResponse {
            embedding: hash_embedding(&req.text, self.dim),
        })
    }

    fn name(&self) -> String {
        format!("hash-embedder-{}", self.dim)
    }
}
