//! Embedding support for feature-path retrieval.
//!
//! The index stores one fixed-dimension vector per feature path, with the
//! full hierarchical path kept as metadata so retrieval results are directly
//! actionable. The embedder is pluggable; the default is a deterministic
//! feature-hashing embedder so tests and scripted runs never depend on a
//! model service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ontology::{FeaturePath, FeatureTree};

/// Errors raised while building, persisting, or querying an index.
#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedder failed for {context:?}: {message}")]
    Embedder { context: String, message: String },
    #[error("vector for {path} has dimension {got}, index dimension is {expected}")]
    DimensionMismatch { path: FeaturePath, got: usize, expected: usize },
    #[error("indexed path {0} does not exist in the tree")]
    UnknownPath(FeaturePath),
    #[error("index is empty")]
    EmptyIndex,
    #[error("index document: {0}")]
    Document(String),
}

/// Anything that can turn text into a fixed-dimension vector.
pub trait Embedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, String>;
    fn dimension(&self) -> usize;
}

/// Deterministic feature-hashing embedder: lowercase alphanumeric tokens are
/// hashed (FNV-1a, fixed across platforms and releases) into `dim` signed
/// buckets and the result is L2-normalized. Texts without tokens embed to
/// the zero vector, which has cosine similarity 0 to everything.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 64 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
        if self.dim == 0 {
            return Err("embedder dimension is zero".into());
        }
        let mut v = vec![0.0f64; self.dim];
        for tok in tokens(text) {
            let h = fnv1a(tok.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign;
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }

    fn dimension(&self) -> usize {
        self.dim
    }
}

/// Cosine similarity; 0 when either vector has no magnitude.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    path: FeaturePath,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct IndexDocument {
    dimension: usize,
    entries: Vec<IndexRecord>,
}

/// Map from feature path to embedding vector. All vectors share one
/// dimension; every indexed path must exist in the tree it was built from.
/// Immutable after build.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingIndex {
    dimension: usize,
    entries: BTreeMap<FeaturePath, Vec<f64>>,
}

impl EmbeddingIndex {
    /// Embeds every path of `tree` with `embedder`. The embedded text is the
    /// full canonical path, so parents contribute context to their children.
    pub fn build(tree: &FeatureTree, embedder: &dyn Embedder) -> Result<Self, EmbedError> {
        let mut entries = BTreeMap::new();
        let dimension = embedder.dimension();
        for path in tree.all_paths() {
            let text = path.to_string();
            let vector = embedder.embed(&text).map_err(|message| EmbedError::Embedder {
                context: text.clone(),
                message,
            })?;
            if vector.len() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    path,
                    got: vector.len(),
                    expected: dimension,
                });
            }
            entries.insert(path, vector);
        }
        Ok(EmbeddingIndex { dimension, entries })
    }

    /// Builds from explicit (path, vector) records, validating that each
    /// path exists in `tree` and that dimensions agree.
    pub fn from_records(
        tree: &FeatureTree,
        records: Vec<(FeaturePath, Vec<f64>)>,
    ) -> Result<Self, EmbedError> {
        let mut entries = BTreeMap::new();
        let mut dimension = None;
        for (path, vector) in records {
            if !tree.contains(&path) {
                return Err(EmbedError::UnknownPath(path));
            }
            let expected = *dimension.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(EmbedError::DimensionMismatch {
                    path,
                    got: vector.len(),
                    expected,
                });
            }
            entries.insert(path, vector);
        }
        Ok(EmbeddingIndex { dimension: dimension.unwrap_or(0), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vector(&self, path: &FeaturePath) -> Option<&[f64]> {
        self.entries.get(path).map(|v| v.as_slice())
    }

    /// Serializes to the `(path, vector)` record document.
    pub fn to_document(&self) -> String {
        let doc = IndexDocument {
            dimension: self.dimension,
            entries: self
                .entries
                .iter()
                .map(|(p, v)| IndexRecord { path: p.clone(), vector: v.clone() })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("index serialization cannot fail")
    }

    /// Parses a record document, re-validating paths against `tree`.
    pub fn from_document(tree: &FeatureTree, document: &str) -> Result<Self, EmbedError> {
        let doc: IndexDocument =
            serde_json::from_str(document).map_err(|e| EmbedError::Document(e.to_string()))?;
        let records = doc.entries.into_iter().map(|r| (r.path, r.vector)).collect();
        let index = Self::from_records(tree, records)?;
        if !index.is_empty() && index.dimension != doc.dimension {
            return Err(EmbedError::Document(format!(
                "declared dimension {} disagrees with entries ({})",
                doc.dimension, index.dimension
            )));
        }
        Ok(index)
    }

    /// Top-`k` paths by descending cosine similarity of the embedded query
    /// to the stored vectors; ties break by canonical path order. Returns
    /// all paths when `k` exceeds the index size.
    pub fn retrieve_top_k(
        &self,
        query: &str,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<FeaturePath>, EmbedError> {
        if self.entries.is_empty() {
            return Err(EmbedError::EmptyIndex);
        }
        let qv = embedder.embed(query).map_err(|message| EmbedError::Embedder {
            context: query.to_string(),
            message,
        })?;
        let mut scored: Vec<(f64, &FeaturePath)> =
            self.entries.iter().map(|(p, v)| (cosine(&qv, v), p)).collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).expect("cosine values are finite").then_with(|| a.1.cmp(b.1))
        });
        Ok(scored.into_iter().take(k).map(|(_, p)| p.clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(s: &str) -> FeaturePath {
        s.parse().unwrap()
    }

    fn fixture_tree() -> FeatureTree {
        FeatureTree::load("alpha/one\nalpha/two\nbeta/three\nbeta/four\ngamma\n").unwrap()
    }

    #[test]
    fn hash_embedder_is_deterministic_and_normalized() {
        let e = HashEmbedder { dim: 16 };
        let a = e.embed("load csv data").unwrap();
        let b = e.embed("load csv data").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_text_ranks_first() {
        let tree = fixture_tree();
        let e = HashEmbedder { dim: 32 };
        let index = EmbeddingIndex::build(&tree, &e).unwrap();
        let top = index.retrieve_top_k("beta/three", 1, &e).unwrap();
        assert_eq!(top, vec![path("beta/three")]);
    }

    #[test]
    fn oversized_k_returns_all_sorted() {
        let tree = fixture_tree();
        let e = HashEmbedder { dim: 32 };
        let index = EmbeddingIndex::build(&tree, &e).unwrap();
        let got = index.retrieve_top_k("alpha", 100, &e).unwrap();
        assert_eq!(got.len(), index.len());
    }

    #[test]
    fn ranking_matches_brute_force_on_hand_vectors() {
        // Brute-force similarity oracle over a 5-path fixture with
        // hand-built 3-dimensional vectors.
        let tree = fixture_tree();
        let records = vec![
            (path("alpha/one"), vec![1.0, 0.0, 0.0]),
            (path("alpha/two"), vec![0.9, 0.1, 0.0]),
            (path("beta/three"), vec![0.0, 1.0, 0.0]),
            (path("beta/four"), vec![0.0, 0.0, 1.0]),
            (path("gamma"), vec![0.5, 0.5, 0.0]),
        ];
        let index = EmbeddingIndex::from_records(&tree, records.clone()).unwrap();

        struct Fixed(Vec<f64>);
        impl Embedder for Fixed {
            fn embed(&self, _: &str) -> Result<Vec<f64>, String> {
                Ok(self.0.clone())
            }
            fn dimension(&self) -> usize {
                self.0.len()
            }
        }
        let query = Fixed(vec![0.8, 0.2, 0.0]);
        let got = index.retrieve_top_k("q", 5, &query).unwrap();

        let mut expected: Vec<(f64, FeaturePath)> = records
            .iter()
            .map(|(p, v)| (cosine(&[0.8, 0.2, 0.0], v), p.clone()))
            .collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let expected: Vec<FeaturePath> = expected.into_iter().map(|(_, p)| p).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn top_k_is_prefix_of_full_ranking() {
        let tree = fixture_tree();
        let e = HashEmbedder { dim: 32 };
        let index = EmbeddingIndex::build(&tree, &e).unwrap();
        let full = index.retrieve_top_k("alpha two beta", index.len(), &e).unwrap();
        for k in 0..=full.len() {
            let prefix = index.retrieve_top_k("alpha two beta", k, &e).unwrap();
            assert_eq!(prefix, full[..k.min(full.len())]);
        }
    }

    #[test]
    fn empty_index_rejected() {
        let index = EmbeddingIndex::default();
        let e = HashEmbedder::default();
        assert!(matches!(index.retrieve_top_k("q", 3, &e), Err(EmbedError::EmptyIndex)));
    }

    #[test]
    fn unknown_path_rejected_at_build() {
        let tree = fixture_tree();
        let err = EmbeddingIndex::from_records(&tree, vec![(path("nope"), vec![1.0])]);
        assert!(matches!(err, Err(EmbedError::UnknownPath(_))));
    }

    #[test]
    fn document_round_trips() {
        let tree = fixture_tree();
        let e = HashEmbedder { dim: 8 };
        let index = EmbeddingIndex::build(&tree, &e).unwrap();
        let doc = index.to_document();
        let back = EmbeddingIndex::from_document(&tree, &doc).unwrap();
        assert_eq!(back, index);
    }
}
