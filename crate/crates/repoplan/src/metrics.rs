//! Repository-level evaluation: category coverage, novelty, and code-scale
//! statistics over a generated workspace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::{cosine, Embedder};
use crate::oracle::{Oracle, OracleError, SlotBindings};
use crate::pysrc;
use crate::workspace::{Workspace, WorkspaceError};

/// Reserved assignment target for features outside the taxonomy.
pub const OOD_CATEGORY: &str = "out_of_distribution";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("taxonomy is empty")]
    EmptyTaxonomy,
    #[error("embedder failed for {context:?}: {message}")]
    Embed { context: String, message: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("{stage}: {message}")]
    Protocol { stage: String, message: String },
}

fn protocol(stage: &str, message: impl Into<String>) -> MetricsError {
    MetricsError::Protocol { stage: stage.to_string(), message: message.into() }
}

/// One leaf category with the chain of group names above it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub trail: Vec<String>,
}

/// Reference categories parsed from a nested named-category document.
/// Leaf entries (empty arrays or empty objects) are the centroids; nonempty
/// objects are roll-up groups that only appear in trails.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTaxonomy {
    categories: Vec<Category>,
    rollups: Vec<String>,
}

impl CategoryTaxonomy {
    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| MetricsError::Taxonomy(format!("malformed document: {e}")))?;
        let Value::Object(entries) = value else {
            return Err(MetricsError::Taxonomy(
                "top level must be an object of named categories".to_string(),
            ));
        };
        let mut taxonomy = CategoryTaxonomy::default();
        let mut seen = BTreeSet::new();
        let mut trail = Vec::new();
        for (name, child) in &entries {
            walk_category(name, child, &mut trail, &mut taxonomy, &mut seen)?;
        }
        if taxonomy.categories.is_empty() {
            return Err(MetricsError::EmptyTaxonomy);
        }
        taxonomy.categories.sort_by(|a, b| a.name.cmp(&b.name));
        taxonomy.rollups.sort();
        Ok(taxonomy)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Leaf category names, sorted.
    pub fn names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Group names that only aggregate other categories.
    pub fn rollups(&self) -> &[String] {
        &self.rollups
    }

    pub fn contains(&self, name: &str) -> bool {
        self.categories.iter().any(|c| c.name == name)
    }

    /// Prompt rendering: one line per category with its group trail.
    pub fn render(&self) -> String {
        self.categories
            .iter()
            .map(|c| {
                if c.trail.is_empty() {
                    format!("- {}", c.name)
                } else {
                    format!("- {} ({})", c.name, c.trail.join(" > "))
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn walk_category(
    name: &str,
    value: &Value,
    trail: &mut Vec<String>,
    taxonomy: &mut CategoryTaxonomy,
    seen: &mut BTreeSet<String>,
) -> Result<(), MetricsError> {
    if name == OOD_CATEGORY {
        return Err(MetricsError::Taxonomy(format!(
            "category name {OOD_CATEGORY:?} is reserved"
        )));
    }
    if !seen.insert(name.to_string()) {
        return Err(MetricsError::Taxonomy(format!("duplicate category name {name:?}")));
    }
    match value {
        Value::Array(items) => {
            if !items.is_empty() {
                return Err(MetricsError::Taxonomy(format!(
                    "category {name:?} lists members; expected an empty array"
                )));
            }
            taxonomy
                .categories
                .push(Category { name: name.to_string(), trail: trail.clone() });
        }
        Value::Object(children) if children.is_empty() => {
            taxonomy
                .categories
                .push(Category { name: name.to_string(), trail: trail.clone() });
        }
        Value::Object(children) => {
            taxonomy.rollups.push(name.to_string());
            trail.push(name.to_string());
            for (child_name, child) in children {
                walk_category(child_name, child, trail, taxonomy, seen)?;
            }
            trail.pop();
        }
        other => {
            return Err(MetricsError::Taxonomy(format!(
                "category {name:?} has unsupported value {other}"
            )));
        }
    }
    Ok(())
}

/// Total mapping from generated functionality texts to categories, in the
/// input order with duplicates preserved.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pairs: Vec<(String, String)>,
}

impl Assignment {
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        Assignment { pairs }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn category_of(&self, feature: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(f, _)| f == feature)
            .map(|(_, c)| c.as_str())
    }

    /// Features grouped under their assigned category.
    pub fn grouped(&self) -> BTreeMap<String, Vec<String>> {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (feature, category) in &self.pairs {
            groups.entry(category.clone()).or_default().push(feature.clone());
        }
        groups
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignConfig {
    /// Cosine-distance radius beyond which a feature is out of
    /// distribution.
    pub ood_radius: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig { ood_radius: 0.75 }
    }
}

/// Nearest fixed centroid over category-name embeddings; features farther
/// than the radius from every centroid go out of distribution. Ties break
/// toward the lexicographically first category.
pub fn nearest_centroid_assign(
    features: &[String],
    taxonomy: &CategoryTaxonomy,
    embedder: &dyn Embedder,
    config: &AssignConfig,
) -> Result<Assignment, MetricsError> {
    if taxonomy.is_empty() {
        return Err(MetricsError::EmptyTaxonomy);
    }
    let mut centroids = Vec::new();
    for category in taxonomy.categories() {
        let vector = embedder.embed(&category.name).map_err(|message| {
            MetricsError::Embed { context: category.name.clone(), message }
        })?;
        centroids.push((category.name.as_str(), vector));
    }
    let mut pairs = Vec::new();
    for feature in features {
        let vector = embedder
            .embed(feature)
            .map_err(|message| MetricsError::Embed { context: feature.clone(), message })?;
        let mut best: Option<(&str, f64)> = None;
        for (name, centroid) in &centroids {
            let distance = 1.0 - cosine(&vector, centroid);
            if best.map(|(_, d)| distance < d).unwrap_or(true) {
                best = Some((name, distance));
            }
        }
        let category = match best {
            Some((name, distance)) if distance <= config.ood_radius => name.to_string(),
            _ => OOD_CATEGORY.to_string(),
        };
        pairs.push((feature.clone(), category));
    }
    Ok(Assignment { pairs })
}

/// Nearest-centroid assignment refined by a judge pass: the judge sees the
/// taxonomy and every proposed pair and must return each feature exactly
/// once, keeping, reassigning, or marking it out of distribution.
pub fn assign_categories(
    features: &[String],
    taxonomy: &CategoryTaxonomy,
    embedder: &dyn Embedder,
    oracle: &Oracle,
    config: &AssignConfig,
) -> Result<Assignment, MetricsError> {
    let proposal = nearest_centroid_assign(features, taxonomy, embedder, config)?;
    if proposal.is_empty() {
        return Ok(proposal);
    }
    let unique: BTreeSet<&str> = proposal.pairs().iter().map(|(f, _)| f.as_str()).collect();
    let assignments_text = {
        let mut lines = Vec::new();
        let mut listed = BTreeSet::new();
        for (feature, category) in proposal.pairs() {
            if listed.insert(feature.as_str()) {
                lines.push(format!("{feature} -> {category}"));
            }
        }
        lines.join("\n")
    };
    let blocks = oracle.exchange(
        "assign_refine",
        &SlotBindings::new()
            .set("taxonomy", taxonomy.render())
            .set("assignments", assignments_text),
    )?;
    let payload = blocks
        .payload
        .as_structured()
        .ok_or_else(|| protocol("assign_refine", "expected a structured payload"))?;
    let entries = payload
        .get("assignments")
        .and_then(|v| v.as_array())
        .ok_or_else(|| protocol("assign_refine", "expected {\"assignments\": [...]}"))?;
    let mut refined: BTreeMap<String, String> = BTreeMap::new();
    for entry in entries {
        let feature = entry
            .get("feature")
            .and_then(|v| v.as_str())
            .ok_or_else(|| protocol("assign_refine", "entry without a feature"))?;
        let category = entry
            .get("category")
            .and_then(|v| v.as_str())
            .ok_or_else(|| protocol("assign_refine", "entry without a category"))?;
        if !unique.contains(feature) {
            return Err(protocol(
                "assign_refine",
                format!("unknown feature {feature:?} in judgment"),
            ));
        }
        if category != OOD_CATEGORY && !taxonomy.contains(category) {
            return Err(protocol(
                "assign_refine",
                format!("category {category:?} is not a taxonomy leaf"),
            ));
        }
        if refined.insert(feature.to_string(), category.to_string()).is_some() {
            return Err(protocol(
                "assign_refine",
                format!("feature {feature:?} judged twice"),
            ));
        }
    }
    if refined.len() != unique.len() {
        let missing: Vec<&str> = unique
            .iter()
            .filter(|f| !refined.contains_key(**f))
            .copied()
            .collect();
        return Err(protocol(
            "assign_refine",
            format!("judgment dropped features: {}", missing.join(", ")),
        ));
    }
    let pairs = proposal
        .pairs()
        .iter()
        .map(|(feature, _)| (feature.clone(), refined[feature].clone()))
        .collect();
    Ok(Assignment { pairs })
}

/// Fraction of reference categories hit by at least one assigned feature.
pub fn coverage(
    assignment: &Assignment,
    taxonomy: &CategoryTaxonomy,
) -> Result<f64, MetricsError> {
    if taxonomy.is_empty() {
        return Err(MetricsError::EmptyTaxonomy);
    }
    let hit: BTreeSet<&str> = assignment
        .pairs()
        .iter()
        .map(|(_, c)| c.as_str())
        .filter(|c| taxonomy.contains(c))
        .collect();
    Ok(hit.len() as f64 / taxonomy.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub ratio: f64,
    pub novel: usize,
    pub total: usize,
}

/// Fraction of features assigned out of distribution, with the raw
/// novel/total pair. An empty assignment reports (0, 0) at ratio 0.
pub fn novelty(assignment: &Assignment) -> NoveltyReport {
    let total = assignment.len();
    let novel = assignment
        .pairs()
        .iter()
        .filter(|(_, c)| c == OOD_CATEGORY)
        .count();
    let ratio = if total == 0 { 0.0 } else { novel as f64 / total as f64 };
    NoveltyReport { ratio, novel, total }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsConfig {
    /// Path components whose files are unrelated to core functionality.
    pub exclusions: Vec<String>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            exclusions: vec![
                "tests".to_string(),
                "examples".to_string(),
                "benchmarks".to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeStats {
    pub files: usize,
    pub loc: usize,
    pub tokens: usize,
    pub warnings: Vec<String>,
}

/// Whitespace-and-punctuation token count: identifier and number runs are
/// one token each, every other non-whitespace character is its own token.
pub fn token_count(normalized: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for ch in normalized.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !ch.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

/// File count, normalized LOC, and token count over the workspace's Python
/// sources, skipping excluded directories. Unreadable files are skipped
/// with a warning.
pub fn code_stats(ws: &Workspace, config: &StatsConfig) -> Result<CodeStats, MetricsError> {
    let mut stats = CodeStats::default();
    for file in ws.list_files()? {
        if !file.ends_with(".py") {
            continue;
        }
        let excluded = file
            .split('/')
            .any(|segment| config.exclusions.iter().any(|e| e == segment));
        if excluded {
            continue;
        }
        let source = match ws.read(&file) {
            Ok(source) => source,
            Err(err) => {
                stats.warnings.push(format!("skipped {file}: {err}"));
                continue;
            }
        };
        let normalized = pysrc::normalized_source(&source);
        stats.files += 1;
        stats.loc += pysrc::code_line_count(&source);
        stats.tokens += token_count(&normalized);
    }
    Ok(stats)
}

/// One evaluation run's numbers, mirroring the report columns
/// Cov. / Nov. (Novel/Total) / Files / LOC / Tokens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub coverage: f64,
    pub novelty: NoveltyReport,
    pub stats: CodeStats,
    pub by_category: BTreeMap<String, Vec<String>>,
}

pub fn build_report(
    assignment: &Assignment,
    taxonomy: &CategoryTaxonomy,
    stats: CodeStats,
) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        coverage: coverage(assignment, taxonomy)?,
        novelty: novelty(assignment),
        stats,
        by_category: assignment.grouped(),
    })
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let nov = format!(
            "{:.1}% ({}/{})",
            self.novelty.ratio * 100.0,
            self.novelty.novel,
            self.novelty.total
        );
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:<20} {:<7} {:<7} {:<7}\n",
            "Cov.", "Nov. (Novel/Total)", "Files", "LOC", "Tokens"
        ));
        out.push_str(&format!(
            "{:<8} {:<20} {:<7} {:<7} {:<7}\n",
            format!("{:.1}%", self.coverage * 100.0),
            nov,
            self.stats.files,
            self.stats.loc,
            self.stats.tokens
        ));
        for warning in &self.stats.warnings {
            out.push_str(&format!("warning: {warning}\n"));
        }
        out
    }
}
