//! Tokenization and hashed term-frequency vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("vector dimension must be a power of two >= 2, got {0}")]
    BadDim(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorizerConfig {
    pub dim: usize,
    pub sublinear_tf: bool,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        VectorizerConfig {
            dim: 65536,
            sublinear_tf: true,
        }
    }
}

impl VectorizerConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.dim < 2 || !self.dim.is_power_of_two() {
            return Err(FeatureError::BadDim(self.dim));
        }
        Ok(())
    }
}

/// Sparse vector with strictly increasing indices below `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn empty(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from `(index, value)` pairs; returns `None` when the
    /// indices are not strictly increasing or fall outside `dim`.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Option<Self> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, v) in pairs {
            if i as usize >= dim || indices.last().is_some_and(|&last| last >= i) {
                return None;
            }
            indices.push(i);
            values.push(v);
        }
        Some(SparseVector { dim, indices, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, v) in self.iter() {
            acc += dense[i] * v;
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Lowercased maximal runs of alphanumeric code points.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub fn feature_index(token: &str, dim: usize) -> u32 {
    (fnv1a_64(token.as_bytes()) % dim as u64) as u32
}

/// Hashed, optionally sublinear, L2-normalized term frequencies.
pub fn vectorize(text: &str, cfg: &VectorizerConfig) -> SparseVector {
    let mut hashed: Vec<u32> = tokenize(text)
        .iter()
        .map(|t| feature_index(t, cfg.dim))
        .collect();
    if hashed.is_empty() {
        return SparseVector::empty(cfg.dim);
    }
    hashed.sort_unstable();

    let mut indices = Vec::new();
    let mut values = Vec::new();
    for chunk in hashed.chunk_by(|a, b| a == b) {
        let tf = chunk.len() as f64;
        indices.push(chunk[0]);
        values.push(if cfg.sublinear_tf { 1.0 + tf.ln() } else { tf });
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut values {
        *v /= norm;
    }
    SparseVector {
        dim: cfg.dim,
        indices,
        values,
    }
}

pub fn vectorize_all<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    cfg: &VectorizerConfig,
) -> Vec<SparseVector> {
    texts.into_iter().map(|t| vectorize(t, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(sublinear: bool) -> VectorizerConfig {
        VectorizerConfig {
            dim: 65536,
            sublinear_tf: sublinear,
        }
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Online  PLATFORM!"), vec!["online", "platform"]);
        assert_eq!(tokenize("b2b-market"), vec!["b2b", "market"]);
        assert_eq!(tokenize("a é 1"), vec!["a", "é", "1"]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(true).validate().is_ok());
        for dim in [0, 1, 3, 1000] {
            let c = VectorizerConfig { dim, sublinear_tf: true };
            assert_eq!(c.validate(), Err(FeatureError::BadDim(dim)));
        }
    }

    #[test]
    fn empty_text_gives_empty_vector() {
        let v = vectorize("  ;; ", &cfg(true));
        assert!(v.is_empty());
        assert_eq!(v.dim(), 65536);
    }

    #[test]
    fn repeated_token_normalizes_to_one() {
        let v = vectorize("platform platform", &cfg(false));
        assert_eq!(v.indices(), &[feature_index("platform", 65536)]);
        assert_eq!(v.values(), &[1.0]);
    }

    #[test]
    fn two_distinct_tokens_split_mass_evenly() {
        assert_ne!(feature_index("a", 65536), feature_index("b", 65536));
        let v = vectorize("a b", &cfg(true));
        assert_eq!(v.nnz(), 2);
        for &x in v.values() {
            assert!((x - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn sublinear_tf_weights() {
        // "a a b": tf 2 -> 1 + ln 2, tf 1 -> 1
        let v = vectorize("a a b", &cfg(true));
        let a = feature_index("a", 65536);
        let (wa, wb) = (1.0 + 2f64.ln(), 1.0);
        let norm = (wa * wa + wb * wb).sqrt();
        let got_a = v.iter().find(|(i, _)| *i == a as usize).unwrap().1;
        assert!((got_a - wa / norm).abs() < 1e-15);
    }

    #[test]
    fn from_pairs_checks_order() {
        assert!(SparseVector::from_pairs(4, [(0, 1.0), (2, 1.0)]).is_some());
        assert!(SparseVector::from_pairs(4, [(2, 1.0), (2, 1.0)]).is_none());
        assert!(SparseVector::from_pairs(4, [(4, 1.0)]).is_none());
    }

    proptest! {
        #[test]
        fn indices_sorted_and_in_range(text in "\\PC{0,200}", log_dim in 1u32..17) {
            let c = VectorizerConfig { dim: 1 << log_dim, sublinear_tf: true };
            let v = vectorize(&text, &c);
            prop_assert!(v.indices().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(v.indices().iter().all(|&i| (i as usize) < c.dim));
            prop_assert!(v.values().iter().all(|&x| x > 0.0));
            if !v.is_empty() {
                prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn word_order_is_irrelevant(words in proptest::collection::vec("[a-z0-9]{1,6}", 0..30), seed: u64) {
            let mut shuffled = words.clone();
            let n = shuffled.len();
            if n > 1 {
                let k = (seed % n as u64) as usize;
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            let c = cfg(true);
            prop_assert_eq!(vectorize(&words.join(" "), &c), vectorize(&shuffled.join(" "), &c));
        }
    }
}
