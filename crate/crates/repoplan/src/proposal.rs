//! Proposal-stage planning: iterative explore-exploit selection of a
//! repository-aligned feature subtree, and refactoring of that subtree into
//! the functionality graph.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::design::normalize_segment;
use crate::embed::{EmbedError, Embedder, EmbeddingIndex};
use crate::graph::{NodeId, NodeKind, Phase, Rpg, RpgEdge, RpgNode};
use crate::ontology::{FeaturePath, FeatureTree, OntologyError, SamplerConfig};
use crate::oracle::{Oracle, OracleError, SlotBindings};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{stage}: {message}; response: {response}")]
    Protocol { stage: String, message: String, response: String },
    #[error("invalid repo spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("extraction left {features:?} unassigned after {rounds} rounds")]
    Unassigned { rounds: usize, features: Vec<String> },
    #[error("graph construction: {0}")]
    Graph(String),
}

fn protocol(stage: &str, message: impl Into<String>, response: &Value) -> PlanError {
    PlanError::Protocol {
        stage: stage.to_string(),
        message: message.into(),
        response: response.to_string(),
    }
}

/// What the repository is supposed to be, in prompt-ready form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSpec {
    pub name: String,
    pub description: String,
    pub category: String,
    pub purpose: String,
    pub scope: String,
}

impl RepoSpec {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.name.trim().is_empty() {
            return Err(PlanError::InvalidSpec("name is empty".to_string()));
        }
        if self.description.trim().is_empty() {
            return Err(PlanError::InvalidSpec("description is empty".to_string()));
        }
        Ok(())
    }

    /// Description plus the categorical fields, one per line.
    pub fn prompt_description(&self) -> String {
        let mut out = self.description.trim().to_string();
        for (label, value) in [
            ("Category", &self.category),
            ("Purpose", &self.purpose),
            ("Scope", &self.scope),
        ] {
            if !value.trim().is_empty() {
                out.push_str(&format!("\n{label}: {}", value.trim()));
            }
        }
        out
    }
}

/// Budgets for subtree selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Iteration budget K.
    pub iterations: usize,
    /// Exploit retrieval size.
    pub top_k: usize,
    /// Self-check batch size B.
    pub batch_size: usize,
    /// Optional early stop: terminate when an iteration accepts fewer than
    /// threshold * top_k paths. Disabled by default.
    pub termination_threshold: Option<f64>,
    /// Explore sampling knobs.
    pub sampler: SamplerConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            iterations: 30,
            top_k: 20,
            batch_size: 10,
            termination_threshold: None,
            sampler: SamplerConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.iterations == 0 || self.top_k == 0 || self.batch_size == 0 {
            return Err(PlanError::InvalidConfig(
                "iterations, top_k, and batch_size must be positive".to_string(),
            ));
        }
        if let Some(tau) = self.termination_threshold {
            if !tau.is_finite() || tau <= 0.0 {
                return Err(PlanError::InvalidConfig(format!(
                    "termination threshold {tau} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Audit record of one selection iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub iteration: usize,
    pub exploit: Vec<FeaturePath>,
    pub explore: Vec<FeaturePath>,
    pub accepted: Vec<FeaturePath>,
    pub rejected: Vec<FeaturePath>,
    pub leaf_count: usize,
    pub subtree_document: String,
}

/// Selection state: the growing subtree, everything ever evaluated, and the
/// accumulated invented features.
#[derive(Debug, Clone, Default)]
pub struct SubtreeState {
    pub subtree: FeatureTree,
    pub visited: BTreeSet<FeaturePath>,
    pub missing: BTreeSet<FeaturePath>,
    pub snapshots: Vec<IterationSnapshot>,
}

/// Root under which invented features are grafted, keeping them
/// distinguishable from ontology paths.
pub const PROPOSED_ROOT: &str = "proposed";

fn proposed_path(path: &FeaturePath) -> FeaturePath {
    let mut segments = vec![PROPOSED_ROOT.to_string()];
    segments.extend(path.segments().iter().cloned());
    FeaturePath::new(segments).expect("prefixing preserves validity")
}

fn render_paths(paths: &[FeaturePath]) -> String {
    if paths.is_empty() {
        "(none)".to_string()
    } else {
        paths
            .iter()
            .map(|p| format!("- {p}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn render_tree(tree: &FeatureTree) -> String {
    if tree.is_empty() {
        "(empty)".to_string()
    } else {
        tree.canonical_document()
    }
}

fn parse_path_list(
    stage: &str,
    payload: &Value,
    key: &str,
) -> Result<Vec<FeaturePath>, PlanError> {
    let items = payload
        .get(key)
        .and_then(|v| v.as_array())
        .ok_or_else(|| protocol(stage, format!("expected {{{key:?}: [...]}}"), payload))?;
    let mut paths = Vec::new();
    for item in items {
        let text = item
            .as_str()
            .ok_or_else(|| protocol(stage, "path entries must be strings", payload))?;
        let path: FeaturePath = text
            .parse()
            .map_err(|e| protocol(stage, format!("bad path {text:?}: {e}"), payload))?;
        paths.push(path);
    }
    Ok(paths)
}

fn select_candidates(
    oracle: &Oracle,
    template: &str,
    tree_slot: &str,
    spec: &RepoSpec,
    candidates: &[FeaturePath],
    state: &SubtreeState,
    global: &FeatureTree,
) -> Result<Vec<FeaturePath>, PlanError> {
    let blocks = oracle.exchange(
        template,
        &SlotBindings::new()
            .set("repo_name", spec.name.as_str())
            .set("repo_description", spec.prompt_description())
            .set(tree_slot, render_paths(candidates))
            .set("current_tree", render_tree(&state.subtree)),
    )?;
    let payload = blocks
        .payload
        .as_structured()
        .ok_or_else(|| protocol(template, "expected a structured payload", &Value::Null))?;
    let selected = parse_path_list(template, payload, "all_selected_feature_paths")?;
    for path in &selected {
        if !global.contains(path) {
            return Err(protocol(
                template,
                format!("selected path {path} is not in the ontology"),
                payload,
            ));
        }
    }
    Ok(selected)
}

/// Asks for concrete capabilities absent from the current subtree; returns
/// the parsed paths with any that duplicate the subtree filtered out.
pub fn propose_missing(
    state: &SubtreeState,
    spec: &RepoSpec,
    oracle: &Oracle,
) -> Result<BTreeSet<FeaturePath>, PlanError> {
    let blocks = oracle.exchange(
        "propose_missing",
        &SlotBindings::new()
            .set("repo_name", spec.name.as_str())
            .set("repo_description", spec.prompt_description())
            .set("current_tree", render_tree(&state.subtree)),
    )?;
    let payload = blocks
        .payload
        .as_structured()
        .ok_or_else(|| protocol("propose_missing", "expected a structured payload", &Value::Null))?;
    let nested = payload.get("missing_features").ok_or_else(|| {
        protocol("propose_missing", "expected {\"missing_features\": {...}}", payload)
    })?;
    let mut collected = BTreeSet::new();
    collect_nested_paths("propose_missing", nested, &mut Vec::new(), &mut collected, payload)?;
    Ok(collected
        .into_iter()
        .filter(|p| !state.subtree.contains(p) && !state.subtree.contains(&proposed_path(p)))
        .collect())
}

fn collect_nested_paths(
    stage: &str,
    value: &Value,
    trail: &mut Vec<String>,
    out: &mut BTreeSet<FeaturePath>,
    payload: &Value,
) -> Result<(), PlanError> {
    match value {
        Value::Object(entries) => {
            for (name, child) in entries {
                trail.push(name.clone());
                collect_nested_paths(stage, child, trail, out, payload)?;
                trail.pop();
            }
            Ok(())
        }
        Value::Array(items) => {
            for item in items {
                let leaf = item.as_str().ok_or_else(|| {
                    protocol(stage, "leaf entries must be strings", payload)
                })?;
                let mut segments = trail.clone();
                segments.push(leaf.to_string());
                let path = FeaturePath::new(segments)
                    .map_err(|e| protocol(stage, format!("bad nested path: {e}"), payload))?;
                out.insert(path);
            }
            Ok(())
        }
        other => Err(protocol(
            stage,
            format!("unsupported nesting value {other}"),
            payload,
        )),
    }
}

/// Reviews one candidate batch. Everything in the batch is marked visited;
/// only approved paths are returned. The approved set must be a subset of
/// the batch.
pub fn self_check_batch(
    state: &mut SubtreeState,
    spec: &RepoSpec,
    batch: &[FeaturePath],
    max_batch: usize,
    oracle: &Oracle,
) -> Result<Vec<FeaturePath>, PlanError> {
    if batch.len() > max_batch {
        return Err(PlanError::InvalidConfig(format!(
            "batch of {} exceeds the batch size {max_batch}",
            batch.len()
        )));
    }
    let blocks = oracle.exchange(
        "self_check",
        &SlotBindings::new()
            .set("repo_name", spec.name.as_str())
            .set("repo_description", spec.prompt_description())
            .set("candidate_paths", render_paths(batch))
            .set("current_tree", render_tree(&state.subtree)),
    )?;
    let payload = blocks
        .payload
        .as_structured()
        .ok_or_else(|| protocol("self_check", "expected a structured payload", &Value::Null))?;
    let approved = parse_path_list("self_check", payload, "approved_feature_paths")?;
    let batch_set: BTreeSet<&FeaturePath> = batch.iter().collect();
    for path in &approved {
        if !batch_set.contains(path) {
            return Err(protocol(
                "self_check",
                format!("approved path {path} was not in the batch"),
                payload,
            ));
        }
    }
    state.visited.extend(batch.iter().cloned());
    let approved_set: BTreeSet<&FeaturePath> = approved.iter().collect();
    Ok(batch
        .iter()
        .filter(|p| approved_set.contains(*p))
        .cloned()
        .collect())
}

/// Iterative subtree selection: each iteration retrieves exploit
/// candidates, samples unvisited explore candidates, has the oracle filter
/// both and propose missing features, then self-checks everything in
/// batches and inserts the accepted paths. Runs exactly the configured
/// iteration count unless the optional early stop fires.
pub fn select_subtree<R: Rng + ?Sized>(
    global: &FeatureTree,
    index: &EmbeddingIndex,
    spec: &RepoSpec,
    cfg: &SelectionConfig,
    oracle: &Oracle,
    embedder: &dyn Embedder,
    rng: &mut R,
) -> Result<SubtreeState, PlanError> {
    spec.validate()?;
    cfg.validate()?;
    if global.is_empty() {
        return Err(PlanError::InvalidConfig("global feature tree is empty".to_string()));
    }
    let mut state = SubtreeState::default();
    let query = format!("{}\n{}", spec.name, spec.prompt_description());
    for iteration in 1..=cfg.iterations {
        let exploit = index.retrieve_top_k(&query, cfg.top_k, embedder)?;
        let explore: Vec<FeaturePath> = global
            .reject_sample(None, &cfg.sampler, &state.visited, rng)?
            .into_iter()
            .collect();
        let exploit_selected = select_candidates(
            oracle,
            "select_exploit",
            "exploit_tree",
            spec,
            &exploit,
            &state,
            global,
        )?;
        let explore_selected = select_candidates(
            oracle,
            "select_explore",
            "explore_tree",
            spec,
            &explore,
            &state,
            global,
        )?;
        for path in propose_missing(&state, spec, oracle)? {
            state.missing.insert(proposed_path(&path));
        }

        let mut raw: BTreeSet<FeaturePath> = BTreeSet::new();
        raw.extend(exploit_selected);
        raw.extend(explore_selected);
        raw.extend(state.missing.iter().cloned());
        raw.retain(|p| !state.visited.contains(p) && !state.subtree.contains(p));
        let raw: Vec<FeaturePath> = raw.into_iter().collect();

        let mut accepted_all = Vec::new();
        let mut rejected_all = Vec::new();
        for batch in raw.chunks(cfg.batch_size) {
            let accepted = self_check_batch(&mut state, spec, batch, cfg.batch_size, oracle)?;
            state.subtree = state.subtree.insert_paths(&accepted);
            rejected_all.extend(batch.iter().filter(|p| !accepted.contains(p)).cloned());
            accepted_all.extend(accepted);
        }
        let accepted_count = accepted_all.len();
        state.snapshots.push(IterationSnapshot {
            iteration,
            exploit,
            explore,
            accepted: accepted_all,
            rejected: rejected_all,
            leaf_count: state.subtree.leaf_paths().len(),
            subtree_document: state.subtree.canonical_document(),
        });
        if let Some(tau) = cfg.termination_threshold {
            if (accepted_count as f64) < tau * cfg.top_k as f64 {
                break;
            }
        }
    }
    Ok(state)
}

/// Round caps for the three-stage refactoring loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefactorConfig {
    pub round_cap: usize,
}

impl Default for RefactorConfig {
    fn default() -> Self {
        RefactorConfig { round_cap: 10 }
    }
}

type ModuleAssignment = BTreeMap<String, Vec<FeaturePath>>;

fn render_assignment(assignment: &ModuleAssignment) -> String {
    assignment
        .iter()
        .map(|(module, paths)| {
            let lines = paths
                .iter()
                .map(|p| format!("- {p}"))
                .collect::<Vec<_>>()
                .join("\n");
            format!("{module}:\n{lines}")
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn parse_assignment(
    stage: &str,
    payload: &Value,
    known: &BTreeSet<FeaturePath>,
) -> Result<ModuleAssignment, PlanError> {
    let modules = payload
        .get("modules")
        .and_then(|v| v.as_object())
        .ok_or_else(|| protocol(stage, "expected {\"modules\": {...}}", payload))?;
    let mut assignment = ModuleAssignment::new();
    let mut seen: BTreeSet<FeaturePath> = BTreeSet::new();
    let mut unknown: Vec<String> = Vec::new();
    for (module, value) in modules {
        let items = value
            .as_array()
            .ok_or_else(|| protocol(stage, format!("module {module:?} must list paths"), payload))?;
        let mut paths = Vec::new();
        for item in items {
            let text = item
                .as_str()
                .ok_or_else(|| protocol(stage, "feature entries must be strings", payload))?;
            let path: FeaturePath = text
                .parse()
                .map_err(|e| protocol(stage, format!("bad path {text:?}: {e}"), payload))?;
            if !known.contains(&path) {
                unknown.push(text.to_string());
                continue;
            }
            if !seen.insert(path.clone()) {
                return Err(protocol(
                    stage,
                    format!("feature {path} assigned more than once"),
                    payload,
                ));
            }
            paths.push(path);
        }
        if !paths.is_empty() {
            assignment.insert(module.clone(), paths);
        }
    }
    if !unknown.is_empty() {
        return Err(protocol(
            stage,
            format!("unknown features: {}", unknown.join(", ")),
            payload,
        ));
    }
    Ok(assignment)
}

fn extract_modules(
    features: &[FeaturePath],
    spec: &RepoSpec,
    oracle: &Oracle,
    cfg: &RefactorConfig,
) -> Result<ModuleAssignment, PlanError> {
    let mut assignment = ModuleAssignment::new();
    let mut assigned: BTreeSet<FeaturePath> = BTreeSet::new();
    for _ in 0..cfg.round_cap {
        let remaining: Vec<FeaturePath> = features
            .iter()
            .filter(|f| !assigned.contains(*f))
            .cloned()
            .collect();
        if remaining.is_empty() {
            break;
        }
        let blocks = oracle.exchange(
            "refactor_extract",
            &SlotBindings::new()
                .set("repo_name", spec.name.as_str())
                .set("repo_description", spec.prompt_description())
                .set("feature_paths", render_paths(&remaining)),
        )?;
        let payload = blocks.payload.as_structured().ok_or_else(|| {
            protocol("refactor_extract", "expected a structured payload", &Value::Null)
        })?;
        let remaining_set: BTreeSet<FeaturePath> = remaining.into_iter().collect();
        let round = parse_assignment("refactor_extract", payload, &remaining_set)?;
        for (module, paths) in round {
            assigned.extend(paths.iter().cloned());
            assignment.entry(module).or_default().extend(paths);
        }
    }
    let leftover: Vec<String> = features
        .iter()
        .filter(|f| !assigned.contains(*f))
        .map(|f| f.to_string())
        .collect();
    if !leftover.is_empty() {
        return Err(PlanError::Unassigned { rounds: cfg.round_cap, features: leftover });
    }
    Ok(assignment)
}

fn reorganize_modules(
    assignment: ModuleAssignment,
    all_features: &BTreeSet<FeaturePath>,
    spec: &RepoSpec,
    oracle: &Oracle,
    cfg: &RefactorConfig,
) -> Result<ModuleAssignment, PlanError> {
    let mut current = assignment;
    for _ in 0..cfg.round_cap {
        let blocks = oracle.exchange(
            "refactor_reorganize",
            &SlotBindings::new()
                .set("repo_name", spec.name.as_str())
                .set("current_assignment", render_assignment(&current)),
        )?;
        let payload = blocks.payload.as_structured().ok_or_else(|| {
            protocol("refactor_reorganize", "expected a structured payload", &Value::Null)
        })?;
        let next = parse_assignment("refactor_reorganize", payload, all_features)?;
        let covered: BTreeSet<&FeaturePath> = next.values().flatten().collect();
        if covered.len() != all_features.len() {
            let dropped: Vec<String> = all_features
                .iter()
                .filter(|f| !covered.contains(*f))
                .map(|f| f.to_string())
                .collect();
            return Err(protocol(
                "refactor_reorganize",
                format!("assignment dropped features: {}", dropped.join(", ")),
                payload,
            ));
        }
        let stable = payload.get("stable").and_then(|v| v.as_bool()).ok_or_else(|| {
            protocol("refactor_reorganize", "expected a boolean \"stable\" flag", payload)
        })?;
        current = next;
        if stable {
            break;
        }
    }
    Ok(current)
}

struct GraphBuilder {
    rpg: Rpg,
    used_ids: BTreeSet<String>,
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder { rpg: Rpg::new(Phase::Proposal), used_ids: BTreeSet::new() }
    }

    fn claim_id(&mut self, base: &str) -> String {
        if self.used_ids.insert(base.to_string()) {
            return base.to_string();
        }
        let mut n = 2;
        loop {
            let candidate = format!("{base}_{n}");
            if self.used_ids.insert(candidate.clone()) {
                return candidate;
            }
            n += 1;
        }
    }

    fn add_node(&mut self, parent: Option<&NodeId>, label: &str, kind: NodeKind) -> NodeId {
        let base = match parent {
            Some(p) => format!("{p}/{}", normalize_segment(label)),
            None => normalize_segment(label),
        };
        let id_text = self.claim_id(&base);
        let node = RpgNode::new(&id_text, label, kind);
        let id = node.id.clone();
        self.rpg.nodes.push(node);
        if let Some(p) = parent {
            self.rpg.edges.push(RpgEdge::Hierarchy { from: p.clone(), to: id.clone() });
        }
        id
    }

    fn add_leaf(&mut self, parent: &NodeId, path: &FeaturePath) {
        let id = self.add_node(Some(parent), path.leaf_name(), NodeKind::Leaf);
        let node = self
            .rpg
            .nodes
            .iter_mut()
            .find(|n| n.id == id)
            .expect("node just added");
        node.feature_paths.insert(path.clone());
    }
}

fn build_module_structure(
    builder: &mut GraphBuilder,
    parent: &NodeId,
    value: &Value,
    module_paths: &BTreeSet<FeaturePath>,
    placed: &mut BTreeSet<FeaturePath>,
    payload: &Value,
) -> Result<(), PlanError> {
    match value {
        Value::Array(items) => {
            for item in items {
                let text = item.as_str().ok_or_else(|| {
                    protocol("refactor_refine", "feature entries must be strings", payload)
                })?;
                let path: FeaturePath = text.parse().map_err(|e| {
                    protocol("refactor_refine", format!("bad path {text:?}: {e}"), payload)
                })?;
                if !module_paths.contains(&path) {
                    return Err(protocol(
                        "refactor_refine",
                        format!("unknown features: {path}"),
                        payload,
                    ));
                }
                if !placed.insert(path.clone()) {
                    return Err(protocol(
                        "refactor_refine",
                        format!("feature {path} placed more than once"),
                        payload,
                    ));
                }
                builder.add_leaf(parent, &path);
            }
            Ok(())
        }
        Value::Object(groups) => {
            for (group, child) in groups {
                let group_id = builder.add_node(Some(parent), group, NodeKind::Component);
                build_module_structure(builder, &group_id, child, module_paths, placed, payload)?;
            }
            Ok(())
        }
        other => Err(protocol(
            "refactor_refine",
            format!("unsupported structure value {other}"),
            payload,
        )),
    }
}

/// Refactors the selected subtree into a proposal-phase functionality
/// graph: module extraction until every feature is covered, reorganization
/// until the oracle declares the partition stable (or the round cap), and
/// per-module refinement into a nested component hierarchy. Every subtree
/// leaf lands on exactly one graph leaf.
pub fn refactor_to_graph(
    state: &SubtreeState,
    spec: &RepoSpec,
    oracle: &Oracle,
    cfg: &RefactorConfig,
) -> Result<Rpg, PlanError> {
    spec.validate()?;
    let features = state.subtree.leaf_paths();
    if features.is_empty() {
        return Err(PlanError::InvalidConfig("subtree has no features".to_string()));
    }
    let all_features: BTreeSet<FeaturePath> = features.iter().cloned().collect();

    let extracted = extract_modules(&features, spec, oracle, cfg)?;
    let assignment = reorganize_modules(extracted, &all_features, spec, oracle, cfg)?;

    let mut builder = GraphBuilder::new();
    for (module, paths) in &assignment {
        let module_paths: BTreeSet<FeaturePath> = paths.iter().cloned().collect();
        let blocks = oracle.exchange(
            "refactor_refine",
            &SlotBindings::new()
                .set("module_name", module.as_str())
                .set("feature_paths", render_paths(paths)),
        )?;
        let payload = blocks.payload.as_structured().ok_or_else(|| {
            protocol("refactor_refine", "expected a structured payload", &Value::Null)
        })?;
        let structure = payload.get("structure").ok_or_else(|| {
            protocol("refactor_refine", "expected {\"structure\": ...}", payload)
        })?;
        let root = builder.add_node(None, module, NodeKind::SubgraphRoot);
        let mut placed = BTreeSet::new();
        build_module_structure(&mut builder, &root, structure, &module_paths, &mut placed, payload)?;
        if placed.len() != module_paths.len() {
            let dropped: Vec<String> = module_paths
                .iter()
                .filter(|p| !placed.contains(*p))
                .map(|p| p.to_string())
                .collect();
            return Err(protocol(
                "refactor_refine",
                format!("structure dropped features: {}", dropped.join(", ")),
                payload,
            ));
        }
    }

    let rpg = builder.rpg;
    let violations = rpg.validate();
    if !violations.is_empty() {
        return Err(PlanError::Graph(format!(
            "constructed graph violates invariants: {violations:?}"
        )));
    }
    let mut graph_leaves: Vec<FeaturePath> = rpg
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Leaf)
        .flat_map(|n| n.feature_paths.iter().cloned())
        .collect();
    graph_leaves.sort();
    let mut expected: Vec<FeaturePath> = features.clone();
    expected.sort();
    if graph_leaves != expected {
        return Err(PlanError::Graph(
            "graph leaves do not conserve the subtree features".to_string(),
        ));
    }
    Ok(rpg)
}
