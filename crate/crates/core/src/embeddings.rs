//! Unit-normalized description embeddings, cosine similarity, exact top-k
//! search and the builtin hashing text encoder.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::hash::Hasher;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::trajectory::ToolId;

/// Default dimension of the builtin encoder; matches the 384-dimensional
/// sentence encoders typically used for tool descriptions.
pub const DEFAULT_DIMENSION: usize = 384;

/// Stored vectors must have unit norm within this tolerance.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderTag {
    Builtin,
    External,
}

impl EncoderTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderTag::Builtin => "builtin-hash-tfidf",
            EncoderTag::External => "external",
        }
    }
}

/// Scales `vector` to unit L2 norm in place. Returns `false` (and leaves the
/// vector untouched) when its norm is zero or not finite.
pub fn normalize(vector: &mut [f32]) -> bool {
    let norm = libm::sqrt(vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>());
    if !(norm > 0.0) || !norm.is_finite() {
        return false;
    }
    for x in vector.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    true
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Anything that can turn a query into a unit vector of the store's
/// dimension.
pub trait QueryEncoder {
    fn dimension(&self) -> usize;
    fn encode_query(&self, query: &str) -> Result<Vec<f32>>;
}

/// Immutable map from tool id to unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    vectors: BTreeMap<ToolId, Vec<f32>>,
    encoder: EncoderTag,
}

impl EmbeddingStore {
    /// Builds a store from `(id, vector)` rows, normalizing every vector.
    /// Rows must agree on dimension, ids must be unique and vectors non-zero.
    pub fn from_rows(
        rows: impl IntoIterator<Item = (ToolId, Vec<f32>)>,
        encoder: EncoderTag,
    ) -> Result<Self> {
        let mut dimension = None;
        let mut vectors = BTreeMap::new();
        for (row, (id, mut vector)) in rows.into_iter().enumerate() {
            let expected = *dimension.get_or_insert(vector.len());
            if expected == 0 {
                return Err(Error::format(format!("row {row} (`{id}`) has an empty vector")));
            }
            if vector.len() != expected {
                return Err(Error::format(format!(
                    "row {row} (`{id}`) has dimension {}, expected {expected}",
                    vector.len()
                )));
            }
            if !normalize(&mut vector) {
                return Err(Error::format(format!("row {row} (`{id}`) cannot be normalized")));
            }
            if vectors.insert(id.clone(), vector).is_some() {
                return Err(Error::format(format!("duplicate id `{id}`")));
            }
        }
        let dimension = dimension.ok_or_else(|| Error::format("no embedding rows"))?;
        Ok(EmbeddingStore {
            dimension,
            vectors,
            encoder,
        })
    }

    /// Encodes `(id, description)` pairs with the builtin encoder.
    pub fn from_descriptions<'a>(
        encoder: &BuiltinEncoder,
        descriptions: impl IntoIterator<Item = (&'a ToolId, &'a str)>,
    ) -> Result<Self> {
        let rows: Vec<_> = descriptions
            .into_iter()
            .map(|(id, text)| (id.clone(), encoder.encode(text)))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        Ok(EmbeddingStore {
            dimension: encoder.dimension,
            vectors: rows.into_iter().collect(),
            encoder: EncoderTag::Builtin,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn encoder(&self) -> EncoderTag {
        self.encoder
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, tool: &str) -> bool {
        self.vectors.contains_key(tool)
    }

    pub fn get(&self, tool: &str) -> Option<&[f32]> {
        self.vectors.get(tool).map(Vec::as_slice)
    }

    pub fn tools(&self) -> impl Iterator<Item = &ToolId> {
        self.vectors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ToolId, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k, v.as_slice()))
    }

    fn lookup(&self, tool: &str) -> Result<&[f32]> {
        self.get(tool)
            .ok_or_else(|| Error::MissingEmbedding(ToolId::unchecked(tool)))
    }

    /// Cosine similarity between a unit query vector and a stored tool.
    pub fn semantic_similarity(&self, query: &[f32], tool: &str) -> Result<f64> {
        if query.len() != self.dimension {
            return Err(Error::invalid(format!(
                "query has dimension {}, store has {}",
                query.len(),
                self.dimension
            )));
        }
        Ok(dot(query, self.lookup(tool)?))
    }

    /// Cosine similarity between two stored tools.
    pub fn tool_similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(dot(self.lookup(a)?, self.lookup(b)?))
    }

    /// The `k` most similar tools of `universe`, descending by score with
    /// ties broken by ascending id. Tools absent from the store are skipped.
    pub fn top_k_semantic<'a>(
        &self,
        query: &[f32],
        k: usize,
        universe: impl IntoIterator<Item = &'a ToolId>,
    ) -> Result<Vec<(ToolId, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mut scored = Vec::new();
        for tool in universe {
            if self.contains(tool.as_str()) {
                scored.push((tool.clone(), self.semantic_similarity(query, tool.as_str())?));
            }
        }
        scored.sort_by(|a, b| by_score_then_id(a.1, &a.0, b.1, &b.0));
        scored.dedup_by(|a, b| a.0 == b.0);
        scored.truncate(k);
        Ok(scored)
    }

    /// Every stored tool ranked against `query` (same order as
    /// [`EmbeddingStore::top_k_semantic`]).
    pub fn rank_all(&self, query: &[f32]) -> Result<Vec<(ToolId, f64)>> {
        self.top_k_semantic(query, self.len().max(1), self.vectors.keys())
    }
}

/// Descending score, then ascending id.
pub(crate) fn by_score_then_id(sa: f64, a: &ToolId, sb: f64, b: &ToolId) -> Ordering {
    sb.total_cmp(&sa).then_with(|| a.cmp(b))
}

/// Signed feature-hashing text encoder with sublinear term frequency.
///
/// Text is lowercased and split on non-alphanumeric characters. Each token is
/// hashed with 64-bit FNV-1a; the hash modulo `dimension` picks the bucket and
/// the top bit picks the sign. Buckets accumulate `sign * ln(1 + tf)` and the
/// result is L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinEncoder {
    dimension: usize,
}

impl Default for BuiltinEncoder {
    fn default() -> Self {
        BuiltinEncoder {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

/// Bucket and sign a token hashes to.
pub fn token_slot(token: &str, dimension: usize) -> (usize, f32) {
    let mut hasher = FnvHasher::default();
    hasher.write(token.as_bytes());
    let h = hasher.finish();
    let bucket = (h % dimension as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (bucket, sign)
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl BuiltinEncoder {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("encoder dimension must be at least 1"));
        }
        Ok(BuiltinEncoder { dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Encodes text into a unit vector. Text with no tokens (or whose hashed
    /// terms cancel out) maps to the first basis vector.
    pub fn encode(&self, text: &str) -> Vec<f32> {
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokenize(text) {
            *tf.entry(token).or_insert(0) += 1;
        }
        let mut acc = vec![0.0f64; self.dimension];
        for (token, count) in &tf {
            let (bucket, sign) = token_slot(token, self.dimension);
            acc[bucket] += f64::from(sign) * libm::log1p(f64::from(*count));
        }
        let mut vector: Vec<f32> = acc.into_iter().map(|x| x as f32).collect();
        if !normalize(&mut vector) {
            log::warn!("text {text:?} has no usable tokens; using the zero-guard vector");
            vector.iter_mut().for_each(|x| *x = 0.0);
            vector[0] = 1.0;
        }
        vector
    }
}

impl QueryEncoder for BuiltinEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode_query(&self, query: &str) -> Result<Vec<f32>> {
        Ok(self.encode(query))
    }
}

/// Precomputed query vectors keyed by query text, for externally encoded
/// queries.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTable {
    store: EmbeddingStore,
}

impl QueryTable {
    pub fn new(store: EmbeddingStore) -> Self {
        QueryTable { store }
    }
}

impl QueryEncoder for QueryTable {
    fn dimension(&self) -> usize {
        self.store.dimension
    }

    fn encode_query(&self, query: &str) -> Result<Vec<f32>> {
        self.store
            .get(query)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::invalid(format!("no precomputed embedding for query {query:?}")))
    }
}
