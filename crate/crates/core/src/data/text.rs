use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

pub const DEFAULT_HASH_DIM: usize = 1 << 18;

const HASHTAG: &str = "<hashtag>";
const MENTION: &str = "<mention>";
const URL: &str = "<url>";

/// Normalizes raw text into tokens.
///
/// Lowercases and splits on whitespace, then per token:
/// - `#word` becomes `<hashtag>` followed by the bare word,
/// - `@user` becomes `<mention>`,
/// - anything starting with `http://`, `https://` or `www.` becomes `<url>`,
/// - otherwise non-alphanumeric characters are removed.
///
/// Empty tokens are dropped. The placeholder tokens pass through unchanged,
/// so the function is idempotent on its own space-joined output.
pub fn preprocess(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for raw in lower.split_whitespace() {
        if raw == HASHTAG || raw == MENTION || raw == URL {
            out.push(raw.to_string());
        } else if let Some(rest) = raw.strip_prefix('#') {
            out.push(HASHTAG.to_string());
            let bare = strip_non_alnum(rest);
            if !bare.is_empty() {
                out.push(bare);
            }
        } else if raw.starts_with('@') {
            out.push(MENTION.to_string());
        } else if raw.starts_with("http://") || raw.starts_with("https://") || raw.starts_with("www.") {
            out.push(URL.to_string());
        } else {
            let t = strip_non_alnum(raw);
            if !t.is_empty() {
                out.push(t);
            }
        }
    }
    out
}

fn strip_non_alnum(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).collect()
}

/// Sparse feature vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn empty(dim: usize) -> Self {
        SparseVec {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from (index, value) pairs; duplicates are summed and zeros dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            assert!(i < dim, "index {i} out of range for dim {dim}");
            *acc.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = acc.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        SparseVec { dim, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> SparseVec {
        SparseVec::from_pairs(self.dim, self.iter().map(|(i, v)| (i, v * factor)))
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes of `term`, masked to `dim` buckets.
pub(crate) fn hash_term(term: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(term.as_bytes());
    (h.finish() & (dim as u64 - 1)) as usize
}

/// Hashes unigrams and adjacent bigrams into `dim` buckets.
///
/// A bigram is keyed as `"left right"` and only emitted when its two tokens
/// differ. Each bucket holds its term count divided by
/// `sqrt(number of tokens)`.
pub fn featurize(tokens: &[String], dim: usize) -> SparseVec {
    assert!(
        dim >= 2 && dim.is_power_of_two(),
        "hash dim must be a power of two >= 2, got {dim}"
    );
    if tokens.is_empty() {
        return SparseVec::empty(dim);
    }
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        *counts.entry(hash_term(t, dim)).or_insert(0.0) += 1.0;
    }
    for pair in tokens.windows(2) {
        if pair[0] != pair[1] {
            let key = format!("{} {}", pair[0], pair[1]);
            *counts.entry(hash_term(&key, dim)).or_insert(0.0) += 1.0;
        }
    }
    let scale = 1.0 / (tokens.len() as f64).sqrt();
    SparseVec {
        dim,
        indices: counts.keys().copied().collect(),
        values: counts.values().map(|c| c * scale).collect(),
    }
}
