//! The global feature ontology: a weighted capability tree with
//! diversity-aware sampling.
//!
//! Paths are slash-joined segment lists (`data processing/loading/load csv`).
//! The tree stores an optional explicit frequency per node; absent
//! frequencies default to 1. Sampling walks the tree downward, choosing each
//! child by temperature-transformed frequency weights, and rejection sampling
//! re-draws until a candidate overlaps little enough with already-seen nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

/// Errors raised by ontology parsing and sampling.
#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("invalid feature path {path:?}: {reason}")]
    InvalidPath { path: String, reason: String },
    #[error("ontology document line {line}: {message} (record: {record:?})")]
    Document { line: usize, message: String, record: String },
    #[error("ontology document: {0}")]
    Structured(String),
    #[error("unknown path {0} in this tree")]
    UnknownPath(FeaturePath),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("probability vector invalid: {0}")]
    BadDistribution(String),
    #[error("sampler config invalid: {0}")]
    BadConfig(String),
}

/// A hierarchical feature path. Segments are nonempty and never contain
/// `/`; the canonical text form joins them with `/`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeaturePath(Vec<String>);

impl FeaturePath {
    pub fn new(segments: Vec<String>) -> Result<Self, OntologyError> {
        if segments.is_empty() {
            return Err(OntologyError::InvalidPath {
                path: String::new(),
                reason: "empty path".into(),
            });
        }
        for seg in &segments {
            if seg.is_empty() {
                return Err(OntologyError::InvalidPath {
                    path: segments.join("/"),
                    reason: "empty segment".into(),
                });
            }
            if seg.contains('/') {
                return Err(OntologyError::InvalidPath {
                    path: segments.join("/"),
                    reason: format!("segment {seg:?} contains '/'"),
                });
            }
        }
        Ok(FeaturePath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Final segment, the feature's own name.
    pub fn leaf_name(&self) -> &str {
        self.0.last().expect("paths are nonempty")
    }

    pub fn parent(&self) -> Option<FeaturePath> {
        if self.0.len() <= 1 {
            None
        } else {
            Some(FeaturePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn child(&self, segment: &str) -> FeaturePath {
        let mut segs = self.0.clone();
        segs.push(segment.to_string());
        FeaturePath(segs)
    }

    pub fn starts_with(&self, prefix: &FeaturePath) -> bool {
        self.0.len() >= prefix.0.len() && self.0[..prefix.0.len()] == prefix.0[..]
    }
}

impl fmt::Display for FeaturePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl fmt::Debug for FeaturePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FeaturePath({})", self)
    }
}

impl FromStr for FeaturePath {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeaturePath::new(s.split('/').map(|seg| seg.trim().to_string()).collect())
    }
}

impl Serialize for FeaturePath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeaturePath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sampling knobs shared by [`FeatureTree::base_sample`] and
/// [`FeatureTree::reject_sample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Temperature applied to child frequencies; must be positive.
    pub temperature: f64,
    /// Maximum chain length per sampled tree.
    pub sample_size: usize,
    /// Acceptable overlap with already-seen nodes, in [0, 1].
    pub overlap_threshold: f64,
    /// Maximum rejection draws before settling for the least-overlapping one.
    pub max_retries: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { temperature: 1.0, sample_size: 10, overlap_threshold: 0.5, max_retries: 8 }
    }
}

impl SamplerConfig {
    fn check(&self) -> Result<(), OntologyError> {
        if self.temperature <= 0.0 {
            return Err(OntologyError::BadTemperature(self.temperature));
        }
        if self.sample_size == 0 {
            return Err(OntologyError::BadConfig("sample_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err(OntologyError::BadConfig(format!(
                "overlap_threshold {} outside [0, 1]",
                self.overlap_threshold
            )));
        }
        if self.max_retries == 0 {
            return Err(OntologyError::BadConfig("max_retries must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TreeNode {
    /// Explicit frequency if the document carried one; effective weight is 1
    /// otherwise. Repeated explicit frequencies for the same node sum.
    weight: Option<u64>,
    children: BTreeMap<String, TreeNode>,
}

/// The feature ontology. Immutable after load: expansion operations return a
/// new tree, so a loaded tree can be shared read-only across workers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureTree {
    roots: BTreeMap<String, TreeNode>,
}

#[derive(Deserialize)]
struct PathRecord {
    path: String,
    #[serde(default)]
    frequency: Option<u64>,
}

impl FeatureTree {
    pub fn new() -> Self {
        FeatureTree::default()
    }

    /// Parses an ontology document. Two formats are accepted: the
    /// line-oriented form (one `path` or `path<TAB>frequency` record per
    /// line, UTF-8, blank lines ignored) and, when the document starts with
    /// `[`, a JSON array of `{"path": ..., "frequency": ...}` records.
    /// Explicit frequencies for the same node sum; nodes without one default
    /// to weight 1.
    pub fn load(document: &str) -> Result<FeatureTree, OntologyError> {
        if document.trim_start().starts_with('[') {
            return Self::load_structured(document);
        }
        let mut tree = FeatureTree::new();
        for (idx, raw) in document.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (path_text, freq) = match line.split_once('\t') {
                None => (line, None),
                Some((p, f)) => {
                    let freq: u64 = f.trim().parse().map_err(|_| OntologyError::Document {
                        line: idx + 1,
                        message: format!("frequency {:?} is not a nonnegative integer", f.trim()),
                        record: raw.to_string(),
                    })?;
                    (p, Some(freq))
                }
            };
            let path: FeaturePath =
                path_text.parse().map_err(|e| OntologyError::Document {
                    line: idx + 1,
                    message: format!("{e}"),
                    record: raw.to_string(),
                })?;
            tree.insert_with_weight(&path, freq);
        }
        Ok(tree)
    }

    fn load_structured(document: &str) -> Result<FeatureTree, OntologyError> {
        let records: Vec<PathRecord> = serde_json::from_str(document)
            .map_err(|e| OntologyError::Structured(e.to_string()))?;
        let mut tree = FeatureTree::new();
        for rec in records {
            let path: FeaturePath = rec
                .path
                .parse()
                .map_err(|e| OntologyError::Structured(format!("record {:?}: {e}", rec.path)))?;
            tree.insert_with_weight(&path, rec.frequency);
        }
        Ok(tree)
    }

    fn node(&self, path: &FeaturePath) -> Option<&TreeNode> {
        let mut segs = path.segments().iter();
        let mut cur = self.roots.get(segs.next()?)?;
        for seg in segs {
            cur = cur.children.get(seg)?;
        }
        Some(cur)
    }

    fn node_mut_or_create(&mut self, path: &FeaturePath) -> &mut TreeNode {
        let mut segs = path.segments().iter();
        let first = segs.next().expect("paths are nonempty");
        let mut cur = self.roots.entry(first.clone()).or_default();
        for seg in segs {
            cur = cur.children.entry(seg.clone()).or_default();
        }
        cur
    }

    fn insert_with_weight(&mut self, path: &FeaturePath, freq: Option<u64>) {
        let node = self.node_mut_or_create(path);
        if let Some(f) = freq {
            node.weight = Some(node.weight.unwrap_or(0) + f);
        }
    }

    pub fn contains(&self, path: &FeaturePath) -> bool {
        self.node(path).is_some()
    }

    /// Effective frequency weight of a node (explicit value or default 1).
    pub fn weight(&self, path: &FeaturePath) -> Option<f64> {
        self.node(path).map(|n| n.weight.unwrap_or(1) as f64)
    }

    /// Child names under `parent`; `None` addresses the virtual root above
    /// the level-1 nodes.
    pub fn children(&self, parent: Option<&FeaturePath>) -> Vec<FeaturePath> {
        match parent {
            None => self.roots.keys().map(|k| FeaturePath(vec![k.clone()])).collect(),
            Some(p) => match self.node(p) {
                None => Vec::new(),
                Some(n) => n.children.keys().map(|k| p.child(k)).collect(),
            },
        }
    }

    pub fn is_leaf(&self, path: &FeaturePath) -> bool {
        self.node(path).map(|n| n.children.is_empty()).unwrap_or(false)
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Every path in the tree, in canonical order.
    pub fn all_paths(&self) -> Vec<FeaturePath> {
        let mut out = Vec::new();
        fn walk(prefix: &FeaturePath, node: &TreeNode, out: &mut Vec<FeaturePath>) {
            out.push(prefix.clone());
            for (name, child) in &node.children {
                walk(&prefix.child(name), child, out);
            }
        }
        for (name, node) in &self.roots {
            walk(&FeaturePath(vec![name.clone()]), node, &mut out);
        }
        out
    }

    /// Paths of all leaves (nodes without children), in canonical order.
    pub fn leaf_paths(&self) -> Vec<FeaturePath> {
        self.all_paths().into_iter().filter(|p| self.is_leaf(p)).collect()
    }

    pub fn node_count(&self) -> usize {
        self.all_paths().len()
    }

    /// Node counts per depth level; index 0 holds the level-1 count.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        for path in self.all_paths() {
            let level = path.depth();
            if counts.len() < level {
                counts.resize(level, 0);
            }
            counts[level - 1] += 1;
        }
        counts
    }

    /// Returns a new tree containing every current node plus the given
    /// paths, with shared prefixes merged. Idempotent and order-independent.
    pub fn insert_paths(&self, paths: &[FeaturePath]) -> FeatureTree {
        let mut next = self.clone();
        for p in paths {
            next.insert_with_weight(p, None);
        }
        next
    }

    /// Canonical line-oriented rendering: one path per line in sorted order,
    /// explicit frequencies appended tab-separated. Two trees are equal iff
    /// their canonical documents are equal.
    pub fn canonical_document(&self) -> String {
        let mut out = String::new();
        for path in self.all_paths() {
            let node = self.node(&path).expect("enumerated path exists");
            match node.weight {
                Some(w) => out.push_str(&format!("{path}\t{w}\n")),
                None => out.push_str(&format!("{path}\n")),
            }
        }
        out
    }

    /// Draws one chain sample: starting at `root` (the virtual root when
    /// `None`), repeatedly picks a child with probability proportional to
    /// temperature-transformed frequency weights and descends, stopping at a
    /// leaf or after `sample_size` steps. Returns the sampled nodes' paths.
    pub fn base_sample<R: Rng + ?Sized>(
        &self,
        root: Option<&FeaturePath>,
        cfg: &SamplerConfig,
        rng: &mut R,
    ) -> Result<BTreeSet<FeaturePath>, OntologyError> {
        cfg.check()?;
        if let Some(r) = root {
            if !self.contains(r) {
                return Err(OntologyError::UnknownPath(r.clone()));
            }
        }
        let mut selected = BTreeSet::new();
        let mut cursor: Option<FeaturePath> = root.cloned();
        for _ in 0..cfg.sample_size {
            let children = self.children(cursor.as_ref());
            if children.is_empty() {
                break;
            }
            let freqs: Vec<f64> = children
                .iter()
                .map(|c| self.weight(c).expect("child enumerated from tree"))
                .collect();
            let total: f64 = freqs.iter().sum();
            let probs: Vec<f64> = freqs.iter().map(|f| f / total).collect();
            let q = temp_transform(&probs, cfg.temperature)?;
            let dist = WeightedIndex::new(&q)
                .map_err(|e| OntologyError::BadDistribution(e.to_string()))?;
            let chosen = children[dist.sample(rng)].clone();
            selected.insert(chosen.clone());
            cursor = Some(chosen);
        }
        Ok(selected)
    }

    /// Diversity-aware sampling: draws up to `max_retries` chain samples and
    /// returns the first whose overlap with `seen` is at most
    /// `overlap_threshold`; if none qualifies, returns the draw with the
    /// minimum observed overlap.
    pub fn reject_sample<R: Rng + ?Sized>(
        &self,
        root: Option<&FeaturePath>,
        cfg: &SamplerConfig,
        seen: &BTreeSet<FeaturePath>,
        rng: &mut R,
    ) -> Result<BTreeSet<FeaturePath>, OntologyError> {
        cfg.check()?;
        let mut best: Option<(f64, BTreeSet<FeaturePath>)> = None;
        for _ in 0..cfg.max_retries {
            let candidate = self.base_sample(root, cfg, rng)?;
            let ovl = overlap(&candidate, seen);
            if ovl <= cfg.overlap_threshold {
                return Ok(candidate);
            }
            if best.as_ref().map_or(true, |(b, _)| ovl < *b) {
                best = Some((ovl, candidate));
            }
        }
        Ok(best.expect("max_retries is positive").1)
    }
}

/// Sharpens or flattens a probability vector: `q_i ∝ p_i^(1/t)`,
/// renormalized. `t = 1` is the identity; `t < 1` sharpens toward the
/// argmax; `t > 1` flattens toward uniform.
pub fn temp_transform(p: &[f64], t: f64) -> Result<Vec<f64>, OntologyError> {
    if t <= 0.0 {
        return Err(OntologyError::BadTemperature(t));
    }
    if p.is_empty() {
        return Err(OntologyError::BadDistribution("empty vector".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(OntologyError::BadDistribution(format!("entries sum to {sum}, expected 1")));
    }
    if let Some(bad) = p.iter().find(|x| **x < 0.0 || !x.is_finite()) {
        return Err(OntologyError::BadDistribution(format!("entry {bad} not a probability")));
    }
    let powered: Vec<f64> = p.iter().map(|x| x.powf(1.0 / t)).collect();
    let total: f64 = powered.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(OntologyError::BadDistribution(
            "transformed vector has no positive mass".into(),
        ));
    }
    Ok(powered.into_iter().map(|x| x / total).collect())
}

/// Fraction of `candidate` already present in `seen`; 0 for an empty
/// candidate.
pub fn overlap(candidate: &BTreeSet<FeaturePath>, seen: &BTreeSet<FeaturePath>) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let hits = candidate.intersection(seen).count();
    hits as f64 / candidate.len() as f64
}
