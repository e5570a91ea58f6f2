//! Implementation-level planning: binds the functionality graph to folders,
//! files, data flows, shared base abstractions, and per-feature interfaces.
//!
//! Each stage takes the graph by reference and returns an enriched copy, so
//! callers keep the pre-stage snapshot. Oracle payloads are validated
//! against graph invariants before anything is bound; only data-flow
//! proposals get retries, everything else fails with a typed error.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{
    Binding, InterfaceKind, InterfaceRef, NodeId, NodeKind, Phase, Rpg, RpgEdge, RpgNode,
    ValidationReport,
};
use crate::ontology::FeaturePath;
use crate::oracle::{Oracle, OracleError, SlotBindings};
use crate::pysrc::{self, PyClass, PyFunction, PyItem};
use crate::wire;

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{stage}: {message}")]
    Protocol { stage: String, message: String },
    #[error("directory {dir} assigned to multiple subgraph roots: {}", join_ids(roots))]
    DirConflict { dir: String, roots: Vec<NodeId> },
    #[error("subgraph {root}: leaves still unassigned after {rounds} rounds: {}", leaves.join(", "))]
    Unassigned { root: NodeId, rounds: usize, leaves: Vec<String> },
    #[error("data-flow proposals rejected after {attempts} attempts; last report: {last_report}")]
    FlowRejected { attempts: usize, last_report: String },
    #[error("interface design: {0}")]
    DesignViolation(String),
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(", ")
}

fn protocol(stage: &str, message: impl Into<String>) -> DesignError {
    DesignError::Protocol { stage: stage.to_string(), message: message.into() }
}

/// Lowercase snake_case for one path segment.
pub fn normalize_segment(name: &str) -> String {
    let mut out = String::new();
    let mut last_underscore = true;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_underscore = false;
        } else if !last_underscore {
            out.push('_');
            last_underscore = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    if out.is_empty() {
        out.push('x');
    }
    out
}

/// Folder bindings produced by [`encode_folders`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FolderPlan {
    /// Directory owned by each subgraph root.
    pub root_dirs: BTreeMap<NodeId, String>,
    /// Every directory in the payload, assigned or plain.
    pub folders: BTreeSet<String>,
    /// Plain files proposed alongside folders (for example a README).
    pub extra_files: BTreeSet<String>,
    /// Original subtree name per normalized directory.
    pub renames: BTreeMap<String, String>,
}

/// Asks the oracle for the folder skeleton and binds each subgraph root to
/// a distinct normalized directory.
pub fn encode_folders(
    rpg: &Rpg,
    oracle: &Oracle,
    repo_name: &str,
) -> Result<(Rpg, FolderPlan), DesignError> {
    if rpg.phase != Phase::Proposal {
        return Err(protocol("encode_folders", "graph already past the proposal phase"));
    }
    let report = rpg.validate();
    if !report.is_empty() {
        return Err(protocol("encode_folders", format!("graph invalid: {}", render_report(&report))));
    }
    let mut label_to_root: BTreeMap<&str, &NodeId> = BTreeMap::new();
    for root in rpg.roots() {
        if label_to_root.insert(root.label.as_str(), &root.id).is_some() {
            return Err(protocol(
                "encode_folders",
                format!("two subgraph roots share the label {}", root.label),
            ));
        }
    }

    let labels: Vec<String> = rpg.roots().iter().map(|r| r.label.clone()).collect();
    let bindings = SlotBindings::new()
        .set("repo_name", repo_name)
        .set("subtree_names", labels);
    let blocks = oracle.exchange("encode_folders", &bindings)?;
    let payload = blocks
        .payload
        .as_structured()
        .ok_or_else(|| protocol("encode_folders", "expected a JSON payload"))?
        .clone();

    let mut plan = FolderPlan::default();
    let tree = payload
        .as_object()
        .ok_or_else(|| protocol("encode_folders", "payload must be a JSON object"))?;
    walk_folders(tree, "", &label_to_root, &mut plan)?;

    let missing: Vec<&str> = rpg
        .roots()
        .iter()
        .filter(|r| !plan.root_dirs.contains_key(&r.id))
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(protocol(
            "encode_folders",
            format!("payload assigns no directory to subgraph roots: {}", missing.join(", ")),
        ));
    }

    let mut enriched = rpg.clone();
    for (root_id, dir) in &plan.root_dirs {
        enriched.node_mut(root_id).expect("root exists").structure =
            Some(Binding::Dir(dir.clone()));
    }
    Ok((enriched, plan))
}

fn walk_folders(
    entries: &serde_json::Map<String, serde_json::Value>,
    prefix: &str,
    label_to_root: &BTreeMap<&str, &NodeId>,
    plan: &mut FolderPlan,
) -> Result<(), DesignError> {
    let mut used: BTreeSet<String> = BTreeSet::new();
    for (name, value) in entries {
        if value.is_null() {
            let path =
                if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
            plan.extra_files.insert(path);
            continue;
        }
        let mut segment = normalize_segment(name);
        if used.contains(&segment) {
            let mut n = 2;
            while used.contains(&format!("{segment}_{n}")) {
                n += 1;
            }
            segment = format!("{segment}_{n}");
        }
        used.insert(segment.clone());
        let dir = if prefix.is_empty() { segment.clone() } else { format!("{prefix}/{segment}") };
        plan.folders.insert(dir.clone());
        if segment != *name {
            plan.renames.insert(dir.clone(), name.clone());
        }
        match value {
            serde_json::Value::Object(children) => {
                walk_folders(children, &dir, label_to_root, plan)?;
            }
            serde_json::Value::Array(subtrees) => {
                let mut assigned_here: Vec<NodeId> = Vec::new();
                for subtree in subtrees {
                    let label = subtree.as_str().ok_or_else(|| {
                        protocol("encode_folders", format!("non-string subtree under {dir}"))
                    })?;
                    let root = label_to_root.get(label).ok_or_else(|| {
                        protocol("encode_folders", format!("unknown subtree name {label}"))
                    })?;
                    assigned_here.push((*root).clone());
                }
                if assigned_here.len() > 1 {
                    return Err(DesignError::DirConflict { dir, roots: assigned_here });
                }
                for root in assigned_here {
                    if let Some(previous) = plan.root_dirs.get(&root) {
                        return Err(protocol(
                            "encode_folders",
                            format!("subtree {root} assigned to both {previous} and {dir}"),
                        ));
                    }
                    plan.root_dirs.insert(root, dir.clone());
                }
            }
            other => {
                return Err(protocol(
                    "encode_folders",
                    format!("entry {name} must be an object, array, or null, got {other}"),
                ));
            }
        }
    }
    Ok(())
}

fn render_report(report: &ValidationReport) -> String {
    report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// File assignments produced by [`encode_files`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FilePlan {
    /// Feature paths carried by each file.
    pub files: BTreeMap<String, BTreeSet<FeaturePath>>,
    /// Assignment rounds spent per subgraph root.
    pub rounds_used: BTreeMap<NodeId, usize>,
}

impl FilePlan {
    /// Files under one root directory, sorted.
    pub fn files_under(&self, dir: &str) -> Vec<&str> {
        let prefix = format!("{}/", dir.trim_end_matches('/'));
        self.files.keys().filter(|f| f.starts_with(&prefix)).map(|f| f.as_str()).collect()
    }
}

/// Maps every leaf feature to a file via iterative oracle rounds, binding
/// files onto components (inserting a synthetic component for leaves that
/// hang directly under their root).
pub fn encode_files(
    rpg: &Rpg,
    oracle: &Oracle,
    repo_name: &str,
    round_cap: usize,
) -> Result<(Rpg, FilePlan), DesignError> {
    let mut enriched = rpg.clone();
    let mut plan = FilePlan::default();

    let mut root_ids: Vec<NodeId> =
        rpg.roots().iter().map(|r| r.id.clone()).collect();
    root_ids.sort();

    for root_id in &root_ids {
        let root = rpg.node(root_id).expect("root exists");
        let Some(Binding::Dir(dir)) = &root.structure else {
            return Err(protocol(
                "encode_files",
                format!("subgraph root {root_id} has no directory binding; encode folders first"),
            ));
        };
        let leaf_features: BTreeMap<FeaturePath, NodeId> = rpg
            .descendants(root_id)
            .iter()
            .filter(|n| n.kind == NodeKind::Leaf)
            .flat_map(|n| n.feature_paths.iter().map(|f| (f.clone(), n.id.clone())))
            .collect();
        let mut unassigned: BTreeSet<FeaturePath> = leaf_features.keys().cloned().collect();
        let mut assigned_files: BTreeMap<String, BTreeSet<FeaturePath>> = BTreeMap::new();
        let mut rounds = 0;

        while !unassigned.is_empty() && rounds < round_cap {
            rounds += 1;
            let skeleton = if assigned_files.is_empty() {
                "(no files assigned yet)".to_string()
            } else {
                assigned_files
                    .iter()
                    .map(|(file, feats)| {
                        format!(
                            "{file}: {}",
                            feats.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            let bindings = SlotBindings::new()
                .set("repo_name", repo_name)
                .set("subtree_name", root.label.as_str())
                .set("root_dir", dir.as_str())
                .set(
                    "unassigned_features",
                    unassigned.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
                )
                .set("current_skeleton", skeleton);
            let blocks = oracle.exchange("encode_files", &bindings)?;
            let payload = blocks
                .payload
                .as_structured()
                .and_then(|v| v.as_object())
                .cloned()
                .ok_or_else(|| protocol("encode_files", "expected a JSON object payload"))?;

            let prefix = format!("{}/", dir.trim_end_matches('/'));
            for (file, features) in &payload {
                if !file.starts_with(&prefix) {
                    return Err(protocol(
                        "encode_files",
                        format!("file {file} lies outside root directory {dir}"),
                    ));
                }
                let features = features.as_array().ok_or_else(|| {
                    protocol("encode_files", format!("{file}: features must be an array"))
                })?;
                for feature in features {
                    let text = feature.as_str().ok_or_else(|| {
                        protocol("encode_files", format!("{file}: non-string feature"))
                    })?;
                    let path: FeaturePath = text.parse().map_err(|e| {
                        protocol("encode_files", format!("{file}: bad feature path: {e}"))
                    })?;
                    if !leaf_features.contains_key(&path) {
                        return Err(protocol(
                            "encode_files",
                            format!("{file}: feature {path} is not a leaf of subtree {root_id}"),
                        ));
                    }
                    assigned_files.entry(file.clone()).or_default().insert(path.clone());
                    unassigned.remove(&path);
                }
            }
        }

        if !unassigned.is_empty() {
            return Err(DesignError::Unassigned {
                root: root_id.clone(),
                rounds,
                leaves: unassigned.iter().map(|f| f.to_string()).collect(),
            });
        }
        plan.rounds_used.insert(root_id.clone(), rounds);

        bind_files_to_components(&mut enriched, root_id, &assigned_files, &leaf_features);
        for (file, feats) in assigned_files {
            plan.files.entry(file).or_default().extend(feats);
        }
    }

    Ok((enriched, plan))
}

/// Attaches file bindings to each leaf's parent component; leaves directly
/// under the root get a synthetic component named after the file stem.
fn bind_files_to_components(
    rpg: &mut Rpg,
    root_id: &NodeId,
    assigned_files: &BTreeMap<String, BTreeSet<FeaturePath>>,
    leaf_features: &BTreeMap<FeaturePath, NodeId>,
) {
    let mut leaf_files: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
    for (file, feats) in assigned_files {
        for feat in feats {
            let leaf = leaf_features.get(feat).expect("validated above");
            leaf_files.entry(leaf.clone()).or_default().insert(file.clone());
        }
    }

    for (leaf_id, files) in &leaf_files {
        let parent = rpg.parent(leaf_id).expect("leaf has a parent").clone();
        let parent_kind = rpg.node(&parent).expect("parent exists").kind;
        let component_id = if parent_kind == NodeKind::Component {
            parent
        } else {
            let stem = files
                .iter()
                .next()
                .and_then(|f| f.rsplit('/').next())
                .map(|f| f.trim_end_matches(".py"))
                .unwrap_or("component");
            let component_id = NodeId::new(format!("{root_id}/{stem}"));
            if rpg.node(&component_id).is_none() {
                rpg.nodes.push(RpgNode::new(
                    component_id.as_str(),
                    stem,
                    NodeKind::Component,
                ));
                rpg.edges.push(RpgEdge::Hierarchy {
                    from: root_id.clone(),
                    to: component_id.clone(),
                });
            }
            rpg.edges.retain(|e| {
                !matches!(e, RpgEdge::Hierarchy { from, to } if from == root_id && to == leaf_id)
            });
            rpg.edges.push(RpgEdge::Hierarchy {
                from: component_id.clone(),
                to: leaf_id.clone(),
            });
            component_id
        };
        let node = rpg.node_mut(&component_id).expect("component exists");
        let mut bound = match node.structure.take() {
            Some(Binding::Files(existing)) => existing,
            _ => BTreeSet::new(),
        };
        bound.extend(files.iter().cloned());
        node.structure = Some(Binding::Files(bound));
    }
}

/// One accepted data-flow edge, with the subtree labels as proposed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub data_id: String,
    pub data_type: String,
    pub transformation: String,
}

/// Outcome of data-flow and file-order encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FlowSummary {
    pub records: Vec<FlowRecord>,
    /// Oracle attempts spent until a valid proposal arrived.
    pub attempts: usize,
    /// Accepted file order per subgraph root.
    pub ordered_files: BTreeMap<NodeId, Vec<String>>,
}

impl FlowSummary {
    pub fn render(&self, rpg: &Rpg) -> String {
        if self.records.is_empty() {
            return "(no data-flow edges)".to_string();
        }
        self.records
            .iter()
            .map(|r| {
                let from = rpg.node(&r.from).map(|n| n.label.as_str()).unwrap_or(r.from.as_str());
                let to = rpg.node(&r.to).map(|n| n.label.as_str()).unwrap_or(r.to.as_str());
                format!(
                    "{from} -> {to} [{}: {}, transformation: {}]",
                    r.data_id, r.data_type, r.transformation
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Asks the oracle for inter-subtree data flows, re-asking on invalid
/// proposals up to `retry_cap` total attempts, then encodes intra-subtree
/// file order and flips the graph to the implementation phase.
pub fn encode_data_flows(
    rpg: &Rpg,
    oracle: &Oracle,
    repo_name: &str,
    retry_cap: usize,
) -> Result<(Rpg, FlowSummary), DesignError> {
    let label_to_root: BTreeMap<String, NodeId> =
        rpg.roots().iter().map(|r| (r.label.clone(), r.id.clone())).collect();
    let labels: Vec<String> = label_to_root.keys().cloned().collect();
    let summaries: Vec<String> = rpg
        .roots()
        .iter()
        .map(|root| {
            let dir = match &root.structure {
                Some(Binding::Dir(d)) => d.as_str(),
                _ => "(unbound)",
            };
            let features: Vec<String> = rpg
                .descendants(&root.id)
                .iter()
                .filter(|n| n.kind == NodeKind::Leaf)
                .flat_map(|n| n.feature_paths.iter().map(|f| f.to_string()))
                .collect();
            format!("{} [dir: {dir}]: {}", root.label, features.join(", "))
        })
        .collect();

    let mut attempts = 0;
    let mut last_report = String::from("no proposal received");
    while attempts < retry_cap {
        attempts += 1;
        let bindings = SlotBindings::new()
            .set("repo_name", repo_name)
            .set("trees_names", labels.clone())
            .set("subtree_summaries", summaries.join("\n"));
        let blocks = oracle.exchange("encode_data_flows", &bindings)?;
        let payload = blocks
            .payload
            .as_structured()
            .and_then(|v| v.as_array())
            .cloned()
            .ok_or_else(|| protocol("encode_data_flows", "expected a JSON array payload"))?;

        match parse_flow_edges(&payload, &label_to_root) {
            Ok(records) => {
                let mut candidate = rpg.clone();
                for r in &records {
                    candidate.edges.push(RpgEdge::Dataflow {
                        from: r.from.clone(),
                        to: r.to.clone(),
                        data_id: r.data_id.clone(),
                        data_type: r.data_type.clone(),
                        transformation: r.transformation.clone(),
                    });
                }
                candidate.phase = Phase::Implementation;
                let report = candidate.validate();
                let blocking: Vec<String> = report
                    .violations
                    .iter()
                    .filter(|v| v.invariant != "leaves-fully-bound")
                    .map(|v| v.to_string())
                    .collect();
                if blocking.is_empty() {
                    let ordered = encode_file_orders(&mut candidate, oracle)?;
                    return Ok((
                        candidate,
                        FlowSummary { records, attempts, ordered_files: ordered },
                    ));
                }
                last_report = blocking.join("; ");
            }
            Err(e) => {
                last_report = e.to_string();
            }
        }
    }
    Err(DesignError::FlowRejected { attempts, last_report })
}

fn parse_flow_edges(
    payload: &[serde_json::Value],
    label_to_root: &BTreeMap<String, NodeId>,
) -> Result<Vec<FlowRecord>, DesignError> {
    let mut records = Vec::new();
    for entry in payload {
        let obj = entry
            .as_object()
            .ok_or_else(|| protocol("encode_data_flows", "edge entries must be objects"))?;
        let field = |key: &str| -> Result<String, DesignError> {
            obj.get(key)
                .and_then(|v| v.as_str())
                .map(|s| s.to_string())
                .ok_or_else(|| protocol("encode_data_flows", format!("edge missing field {key}")))
        };
        let from_label = field("from")?;
        let to_label = field("to")?;
        let resolve = |label: &str| -> Result<NodeId, DesignError> {
            label_to_root.get(label).cloned().ok_or_else(|| {
                protocol("encode_data_flows", format!("unknown subtree name {label}"))
            })
        };
        records.push(FlowRecord {
            from: resolve(&from_label)?,
            to: resolve(&to_label)?,
            data_id: field("data_id")?,
            data_type: field("data_type")?,
            transformation: field("transformation")?,
        });
    }
    Ok(records)
}

/// Asks for a file order inside every multi-file subtree and chains the
/// owning components with order edges, by first-file position.
fn encode_file_orders(
    rpg: &mut Rpg,
    oracle: &Oracle,
) -> Result<BTreeMap<NodeId, Vec<String>>, DesignError> {
    let mut ordered_files = BTreeMap::new();
    let mut root_ids: Vec<NodeId> = rpg.roots().iter().map(|r| r.id.clone()).collect();
    root_ids.sort();

    for root_id in root_ids {
        let root = rpg.node(&root_id).expect("root exists");
        let label = root.label.clone();
        let mut file_owner: BTreeMap<String, NodeId> = BTreeMap::new();
        for node in rpg.descendants(&root_id) {
            if node.kind != NodeKind::Component {
                continue;
            }
            if let Some(Binding::Files(files)) = &node.structure {
                for f in files {
                    file_owner.insert(f.clone(), node.id.clone());
                }
            }
        }
        let files: Vec<String> = file_owner.keys().cloned().collect();
        if files.len() < 2 {
            ordered_files.insert(root_id.clone(), files);
            continue;
        }

        let bindings = SlotBindings::new()
            .set("subtree_name", label.as_str())
            .set("files", files.clone());
        let blocks = oracle.exchange("encode_file_order", &bindings)?;
        let ordered: Vec<String> = blocks
            .payload
            .as_structured()
            .and_then(|v| v.get("ordered_files"))
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|v| v.as_str().map(|s| s.to_string())).collect())
            .ok_or_else(|| {
                protocol("encode_file_order", "expected {\"ordered_files\": [...]} payload")
            })?;
        let proposed: BTreeSet<&String> = ordered.iter().collect();
        let expected: BTreeSet<&String> = files.iter().collect();
        if proposed != expected || ordered.len() != files.len() {
            return Err(protocol(
                "encode_file_order",
                format!("ordered list for {label} is not a permutation of its files"),
            ));
        }

        let mut component_chain: Vec<NodeId> = Vec::new();
        for file in &ordered {
            let owner = file_owner.get(file).expect("owner recorded").clone();
            if !component_chain.contains(&owner) {
                component_chain.push(owner);
            }
        }
        for pair in component_chain.windows(2) {
            rpg.edges.push(RpgEdge::Order { from: pair[0].clone(), to: pair[1].clone() });
        }
        ordered_files.insert(root_id.clone(), ordered);
    }
    Ok(ordered_files)
}

/// The two shapes a shared base abstraction can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseKind {
    SharedDataStructure,
    FunctionalBaseClass,
}

/// One shared abstraction proposed for high-degree subtrees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseAbstraction {
    pub kind: BaseKind,
    pub name: String,
    pub file: String,
    pub rationale: String,
    /// Full class source, the member contract downstream stages quote.
    pub contract: String,
}

/// Base-class proposal set, with per-file source for skeleton emission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BaseClasses {
    pub abstractions: Vec<BaseAbstraction>,
    /// Reconstructed file contents (imports plus kept classes).
    pub file_sources: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl BaseClasses {
    pub fn render(&self) -> String {
        if self.file_sources.is_empty() {
            return "(no shared base classes)".to_string();
        }
        self.file_sources
            .iter()
            .map(|(file, source)| format!("# {file}\n{source}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Computes per-root dataflow degrees, asks the oracle for shared
/// abstractions, and enforces the global cap with deterministic
/// truncation (longest rationale first, then name).
pub fn abstract_base_classes(
    rpg: &Rpg,
    oracle: &Oracle,
    repo_name: &str,
    repo_description: &str,
    cap: usize,
) -> Result<BaseClasses, DesignError> {
    let mut out_degree: BTreeMap<&NodeId, usize> = BTreeMap::new();
    let mut in_degree: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for edge in &rpg.edges {
        if let RpgEdge::Dataflow { from, to, .. } = edge {
            *out_degree.entry(from).or_default() += 1;
            *in_degree.entry(to).or_default() += 1;
        }
    }
    let degree_summary: String = rpg
        .roots()
        .iter()
        .map(|r| {
            format!(
                "{}: out-degree {}, in-degree {}",
                r.label,
                out_degree.get(&r.id).copied().unwrap_or(0),
                in_degree.get(&r.id).copied().unwrap_or(0)
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let dataflow_summary: String = rpg
        .edges
        .iter()
        .filter_map(|e| match e {
            RpgEdge::Dataflow { from, to, data_id, data_type, transformation } => {
                let from = rpg.node(from).map(|n| n.label.as_str()).unwrap_or(from.as_str());
                let to = rpg.node(to).map(|n| n.label.as_str()).unwrap_or(to.as_str());
                Some(format!("{from} -> {to} [{data_id}: {data_type}, transformation: {transformation}]"))
            }
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("\n");

    let bindings = SlotBindings::new()
        .set("repo_name", repo_name)
        .set("repo_description", repo_description)
        .set("graph_summary", rpg.render_summary())
        .set("dataflow_summary", dataflow_summary)
        .set("degree_summary", degree_summary);
    let blocks = oracle.exchange("base_classes", &bindings)?;
    let sections = blocks
        .payload
        .as_sections()
        .ok_or_else(|| protocol("base_classes", "expected code sections"))?;

    let mut all: Vec<(BaseAbstraction, String)> = Vec::new();
    let mut section_meta: Vec<(String, String)> = Vec::new();
    for section in sections {
        let module = pysrc::parse_module(&section.code);
        let prelude: String = module
            .items
            .iter()
            .take_while(|i| !matches!(i, PyItem::Class(_) | PyItem::Function(_)))
            .map(|i| i.text())
            .collect();
        section_meta.push((section.file.clone(), prelude));
        for class in module.classes() {
            let fields_only = class.methods.iter().all(|m| m.name == "__init__");
            let kind = if fields_only {
                BaseKind::SharedDataStructure
            } else {
                BaseKind::FunctionalBaseClass
            };
            let rationale = class
                .docstring
                .clone()
                .map(|d| d.lines().next().unwrap_or("").trim().to_string())
                .unwrap_or_default();
            all.push((
                BaseAbstraction {
                    kind,
                    name: class.name.clone(),
                    file: section.file.clone(),
                    rationale,
                    contract: class.text.trim_end().to_string(),
                },
                section.file.clone(),
            ));
        }
    }

    let mut names = BTreeSet::new();
    for (base, _) in &all {
        if !names.insert(base.name.clone()) {
            return Err(DesignError::DesignViolation(format!(
                "base abstraction name {} proposed twice",
                base.name
            )));
        }
    }

    let mut warnings = Vec::new();
    let kept_names: BTreeSet<String> = if all.len() > cap {
        let mut ranked: Vec<&(BaseAbstraction, String)> = all.iter().collect();
        ranked.sort_by(|a, b| {
            b.0.rationale
                .len()
                .cmp(&a.0.rationale.len())
                .then_with(|| a.0.name.cmp(&b.0.name))
        });
        let kept: BTreeSet<String> =
            ranked.iter().take(cap).map(|(b, _)| b.name.clone()).collect();
        for (base, _) in &all {
            if !kept.contains(&base.name) {
                warnings.push(format!(
                    "base abstraction {} dropped: cap is {cap}",
                    base.name
                ));
            }
        }
        kept
    } else {
        all.iter().map(|(b, _)| b.name.clone()).collect()
    };

    let abstractions: Vec<BaseAbstraction> = all
        .iter()
        .filter(|(b, _)| kept_names.contains(&b.name))
        .map(|(b, _)| b.clone())
        .collect();

    let mut file_sources: BTreeMap<String, String> = BTreeMap::new();
    for (file, prelude) in &section_meta {
        let kept: Vec<&BaseAbstraction> = abstractions
            .iter()
            .filter(|b| b.file == *file)
            .collect();
        if kept.is_empty() {
            continue;
        }
        let mut source = prelude.trim_end().to_string();
        for base in kept {
            if !source.is_empty() {
                source.push_str("\n\n\n");
            }
            source.push_str(&base.contract);
        }
        source.push('\n');
        file_sources.insert(file.clone(), source);
    }

    Ok(BaseClasses { abstractions, file_sources, warnings })
}

/// One method of a class interface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub signature: String,
    pub doc: String,
}

/// One planned interface: the unit tests are derived from and code is
/// written against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceSpec {
    pub kind: InterfaceKind,
    pub name: String,
    pub signature: String,
    pub doc: String,
    pub feature_paths: BTreeSet<FeaturePath>,
    pub file: String,
    pub base_link: Option<String>,
    pub methods: Vec<MethodSpec>,
    /// Stub source emitted into the skeleton.
    pub stub_source: String,
}

impl InterfaceSpec {
    /// Interface reference a leaf binds for `feature`, preferring the
    /// name-matched method of a feature-grouping class.
    pub fn reference_for(&self, feature: &FeaturePath) -> InterfaceRef {
        if self.kind == InterfaceKind::Class && self.feature_paths.len() > 1 {
            let wanted = normalize_segment(feature.leaf_name());
            let matched: Vec<&MethodSpec> = self
                .methods
                .iter()
                .filter(|m| normalize_segment(&m.name) == wanted)
                .collect();
            if matched.len() == 1 {
                return InterfaceRef::new(
                    &self.file,
                    format!("{}.{}", self.name, matched[0].name),
                    InterfaceKind::Method,
                );
            }
        }
        InterfaceRef::new(&self.file, &self.name, self.kind)
    }
}

/// Everything design needs to ask for one file's interfaces.
pub struct FileDesignContext<'a> {
    pub repo_name: &'a str,
    pub repo_overview: &'a str,
    pub subtree_label: &'a str,
    pub file: &'a str,
    pub features: &'a [FeaturePath],
    pub current_skeleton: &'a str,
    pub dataflow_summary: &'a str,
    pub base_classes: &'a str,
    pub upstream_interfaces: &'a str,
    pub base_names: &'a BTreeSet<String>,
}

/// Designs the interfaces of one file: every feature mapped to exactly one
/// spec, doc contracts validated, class bases linked to abstractions.
pub fn design_interfaces(
    oracle: &Oracle,
    ctx: &FileDesignContext<'_>,
) -> Result<Vec<InterfaceSpec>, DesignError> {
    let bindings = SlotBindings::new()
        .set("repo_name", ctx.repo_name)
        .set("repo_overview", ctx.repo_overview)
        .set("subtree_name", ctx.subtree_label)
        .set("file", ctx.file)
        .set("features", ctx.features.iter().map(|f| f.to_string()).collect::<Vec<_>>())
        .set("current_skeleton", ctx.current_skeleton)
        .set("dataflow_summary", ctx.dataflow_summary)
        .set("base_classes", ctx.base_classes)
        .set("upstream_interfaces", ctx.upstream_interfaces);
    let blocks = oracle.exchange("design_interfaces", &bindings)?;
    let text = blocks
        .payload
        .as_text()
        .ok_or_else(|| protocol("design_interfaces", "expected a text payload"))?;

    let sections = split_design_sections(text)?;
    let expected: BTreeSet<&FeaturePath> = ctx.features.iter().collect();
    let mut mapped: BTreeMap<FeaturePath, usize> = BTreeMap::new();
    let mut specs: Vec<InterfaceSpec> = Vec::new();

    for (features, code) in &sections {
        let mut section_paths = Vec::new();
        for raw in features {
            let path: FeaturePath = raw.parse().map_err(|e| {
                DesignError::DesignViolation(format!("bad feature path {raw}: {e}"))
            })?;
            if !expected.contains(&path) {
                return Err(DesignError::DesignViolation(format!(
                    "feature {path} is not mapped to file {}",
                    ctx.file
                )));
            }
            section_paths.push(path);
        }
        let module = pysrc::parse_module(code);
        let items: Vec<&PyItem> = module
            .items
            .iter()
            .filter(|i| matches!(i, PyItem::Function(_) | PyItem::Class(_)))
            .collect();

        let pairs: Vec<(Vec<FeaturePath>, &PyItem)> = if items.len() == section_paths.len() {
            section_paths.iter().cloned().map(|p| vec![p]).zip(items).collect()
        } else if items.len() == 1 && matches!(items[0], PyItem::Class(_)) {
            vec![(section_paths.clone(), items[0])]
        } else {
            return Err(DesignError::DesignViolation(format!(
                "section for [{}] defines {} interfaces for {} features",
                features.join(", "),
                items.len(),
                section_paths.len()
            )));
        };

        for (paths, item) in pairs {
            let spec = match item {
                PyItem::Function(f) => function_spec(f, ctx.file, &paths)?,
                PyItem::Class(c) => class_spec(c, ctx.file, &paths, ctx.base_names)?,
                _ => unreachable!("filtered above"),
            };
            for p in &paths {
                let idx = specs.len();
                if mapped.insert(p.clone(), idx).is_some() {
                    return Err(DesignError::DesignViolation(format!(
                        "feature {p} mapped to more than one interface"
                    )));
                }
            }
            specs.push(spec);
        }
    }

    for feature in ctx.features {
        if !mapped.contains_key(feature) {
            return Err(DesignError::DesignViolation(format!(
                "feature {feature} left without an interface in {}",
                ctx.file
            )));
        }
    }
    let mut names = BTreeSet::new();
    for spec in &specs {
        if !names.insert(spec.name.clone()) {
            return Err(DesignError::DesignViolation(format!(
                "interface name {} duplicated within {}",
                spec.name, ctx.file
            )));
        }
    }
    Ok(specs)
}

/// Splits a design response into (features, python code) sections.
fn split_design_sections(text: &str) -> Result<Vec<(Vec<String>, String)>, DesignError> {
    let mut headers: Vec<(usize, Vec<String>)> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with("design_itfs_for_feature(") {
            let snippet = trimmed.trim_end_matches(':');
            let call = wire::parse_tool_call(snippet).map_err(|e| {
                protocol("design_interfaces", format!("bad section header: {e}"))
            })?;
            let features = call
                .kwargs
                .get("features")
                .and_then(|v| v.as_list())
                .map(|items| {
                    items.iter().filter_map(|i| i.as_str().map(|s| s.to_string())).collect()
                })
                .ok_or_else(|| {
                    protocol("design_interfaces", "section header missing features=[...]")
                })?;
            headers.push((offset, features));
        }
        offset += line.len();
    }
    if headers.is_empty() {
        return Err(protocol("design_interfaces", "no design sections in response"));
    }
    let mut sections = Vec::new();
    for (i, (start, features)) in headers.iter().enumerate() {
        let end = headers.get(i + 1).map(|(o, _)| *o).unwrap_or(text.len());
        let body = &text[*start..end];
        let code = wire::extract_fence(body).ok_or_else(|| {
            protocol(
                "design_interfaces",
                format!("section for [{}] has no code block", features.join(", ")),
            )
        })?;
        sections.push((features.clone(), code));
    }
    Ok(sections)
}

fn function_spec(
    f: &PyFunction,
    file: &str,
    paths: &[FeaturePath],
) -> Result<InterfaceSpec, DesignError> {
    let doc = f.docstring.clone().unwrap_or_default();
    check_doc_contract(&format!("function {}", f.name), &f.signature, &doc)?;
    Ok(InterfaceSpec {
        kind: InterfaceKind::Function,
        name: f.name.clone(),
        signature: f.signature.clone(),
        doc,
        feature_paths: paths.iter().cloned().collect(),
        file: file.to_string(),
        base_link: None,
        methods: Vec::new(),
        stub_source: f.text.trim_end().to_string(),
    })
}

fn class_spec(
    c: &PyClass,
    file: &str,
    paths: &[FeaturePath],
    base_names: &BTreeSet<String>,
) -> Result<InterfaceSpec, DesignError> {
    let doc = c.docstring.clone().unwrap_or_default();
    if doc.trim().is_empty() {
        return Err(DesignError::DesignViolation(format!(
            "class {} lacks a purpose docstring",
            c.name
        )));
    }
    let mut methods = Vec::new();
    for m in &c.methods {
        let mdoc = m.docstring.clone().unwrap_or_default();
        if !m.name.starts_with('_') {
            check_doc_contract(&format!("method {}.{}", c.name, m.name), &m.signature, &mdoc)?;
        }
        methods.push(MethodSpec {
            name: m.name.clone(),
            signature: m.signature.clone(),
            doc: mdoc,
        });
    }
    let base_link = c.bases.iter().find(|b| base_names.contains(*b)).cloned();
    let signature = if c.bases.is_empty() {
        c.name.clone()
    } else {
        format!("{}({})", c.name, c.bases.join(", "))
    };
    Ok(InterfaceSpec {
        kind: InterfaceKind::Class,
        name: c.name.clone(),
        signature,
        doc,
        feature_paths: paths.iter().cloned().collect(),
        file: file.to_string(),
        base_link,
        methods,
        stub_source: c.text.trim_end().to_string(),
    })
}

/// Minimum documentation a spec must carry for tests to be derivable:
/// purpose line, every named parameter mentioned, a Returns section, and
/// at least one error case.
pub fn check_doc_contract(
    what: &str,
    signature: &str,
    doc: &str,
) -> Result<(), DesignError> {
    let violation =
        |msg: String| Err(DesignError::DesignViolation(format!("{what}: {msg}")));
    if doc.trim().is_empty() {
        return violation("doc contract missing entirely".to_string());
    }
    for param in signature_params(signature) {
        if !doc.contains(&param) {
            return violation(format!("parameter {param} not described"));
        }
    }
    if !doc.contains("Returns") {
        return violation("no return description".to_string());
    }
    if !doc.contains("Raises") {
        return violation("no error case described".to_string());
    }
    Ok(())
}

/// Named parameters of a normalized signature, minus self/cls and
/// star-args markers.
fn signature_params(signature: &str) -> Vec<String> {
    let Some(open) = signature.find('(') else { return Vec::new() };
    let Some(close) = signature.rfind(')') else { return Vec::new() };
    if close <= open {
        return Vec::new();
    }
    let mut params = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in signature[open + 1..close].chars() {
        match c {
            '(' | '[' | '{' => {
                depth += 1;
                current.push(c);
            }
            ')' | ']' | '}' => {
                depth = depth.saturating_sub(1);
                current.push(c);
            }
            ',' if depth == 0 => {
                push_param(&mut params, &current);
                current.clear();
            }
            _ => current.push(c),
        }
    }
    push_param(&mut params, &current);
    params
}

fn push_param(params: &mut Vec<String>, raw: &str) {
    let name = raw
        .split([':', '='])
        .next()
        .unwrap_or("")
        .trim()
        .trim_start_matches('*')
        .to_string();
    if name.is_empty() || name == "self" || name == "cls" || name == "/" {
        return;
    }
    params.push(name);
}

/// Roots ordered so every dataflow edge points forward; label tie-break.
pub fn flow_order(rpg: &Rpg) -> Vec<NodeId> {
    let roots: Vec<&RpgNode> = rpg.roots();
    let mut indegree: BTreeMap<&NodeId, usize> = roots.iter().map(|r| (&r.id, 0)).collect();
    let mut outgoing: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
    for e in &rpg.edges {
        if let RpgEdge::Dataflow { from, to, .. } = e {
            if indegree.contains_key(to) && indegree.contains_key(from) {
                *indegree.get_mut(to).unwrap() += 1;
                outgoing.entry(from).or_default().push(to);
            }
        }
    }
    let label_of = |id: &NodeId| {
        rpg.node(id).map(|n| n.label.clone()).unwrap_or_default()
    };
    let mut ready: Vec<&NodeId> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
    ready.sort_by_key(|id| (label_of(id), id.as_str().to_string()));
    let mut order = Vec::new();
    while let Some(next) = ready.first().cloned() {
        ready.retain(|id| *id != next);
        order.push(next.clone());
        for succ in outgoing.get(next).cloned().unwrap_or_default() {
            let d = indegree.get_mut(succ).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(succ);
                ready.sort_by_key(|id| (label_of(id), id.as_str().to_string()));
            }
        }
    }
    order
}

/// Tunables for the implementation-planning pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImplConfig {
    pub file_round_cap: usize,
    pub flow_retry_cap: usize,
    pub base_cap: usize,
}

impl Default for ImplConfig {
    fn default() -> Self {
        ImplConfig { file_round_cap: 5, flow_retry_cap: 3, base_cap: 3 }
    }
}

/// Complete implementation-level plan, persisted alongside the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DesignPlan {
    pub folders: FolderPlan,
    pub files: FilePlan,
    pub flows: FlowSummary,
    pub bases: BaseClasses,
    pub interfaces: Vec<InterfaceSpec>,
    pub warnings: Vec<String>,
}

/// Runs the whole enrichment pipeline: folders, files, data flows and
/// order, base abstractions, then per-file interface design in dataflow
/// order. The returned graph is at the implementation phase with every
/// leaf bound.
pub fn plan_implementation(
    rpg: &Rpg,
    oracle: &Oracle,
    repo_name: &str,
    repo_description: &str,
    config: &ImplConfig,
) -> Result<(Rpg, DesignPlan), DesignError> {
    let (rpg, folders) = encode_folders(rpg, oracle, repo_name)?;
    let (rpg, files) = encode_files(&rpg, oracle, repo_name, config.file_round_cap)?;
    let (mut rpg, flows) = encode_data_flows(&rpg, oracle, repo_name, config.flow_retry_cap)?;
    let bases =
        abstract_base_classes(&rpg, oracle, repo_name, repo_description, config.base_cap)?;
    let mut warnings = bases.warnings.clone();

    let base_names: BTreeSet<String> =
        bases.abstractions.iter().map(|b| b.name.clone()).collect();
    let dataflow_summary = flows.render(&rpg);
    let base_render = bases.render();
    let mut all_specs: Vec<InterfaceSpec> = Vec::new();
    let mut skeleton_lines: Vec<String> = Vec::new();
    let mut upstream_lines: BTreeMap<NodeId, Vec<String>> = BTreeMap::new();

    let flow_ancestors = dataflow_ancestors(&rpg);
    for root_id in flow_order(&rpg) {
        let root_label = rpg.node(&root_id).expect("root exists").label.clone();
        let ordered = flows.ordered_files.get(&root_id).cloned().unwrap_or_default();
        let upstream: String = flow_ancestors
            .get(&root_id)
            .map(|ancestors| {
                let mut lines: Vec<String> = ancestors
                    .iter()
                    .flat_map(|a| upstream_lines.get(a).cloned().unwrap_or_default())
                    .collect();
                lines.sort();
                lines.join("\n")
            })
            .unwrap_or_default();
        let upstream =
            if upstream.is_empty() { "(no upstream interfaces)".to_string() } else { upstream };

        for file in &ordered {
            let features: Vec<FeaturePath> = files
                .files
                .get(file)
                .map(|set| set.iter().cloned().collect())
                .unwrap_or_default();
            if features.is_empty() {
                continue;
            }
            let skeleton = if skeleton_lines.is_empty() {
                "(empty)".to_string()
            } else {
                skeleton_lines.join("\n")
            };
            let ctx = FileDesignContext {
                repo_name,
                repo_overview: repo_description,
                subtree_label: &root_label,
                file,
                features: &features,
                current_skeleton: &skeleton,
                dataflow_summary: &dataflow_summary,
                base_classes: &base_render,
                upstream_interfaces: &upstream,
                base_names: &base_names,
            };
            let specs = design_interfaces(oracle, &ctx)?;
            for spec in &specs {
                skeleton_lines.push(format!("{}: {} {}", spec.file, spec.kind, spec.name));
                upstream_lines.entry(root_id.clone()).or_default().push(format!(
                    "{}: {} {}",
                    spec.file, spec.kind, spec.name
                ));
            }
            all_specs.extend(specs);
        }
    }

    bind_interfaces(&mut rpg, &all_specs)?;
    let report = rpg.validate();
    if !report.is_empty() {
        return Err(protocol(
            "plan_implementation",
            format!("enriched graph invalid: {}", render_report(&report)),
        ));
    }

    let plan = DesignPlan { folders, files, flows, bases, interfaces: all_specs, warnings: {
        warnings.sort();
        warnings
    } };
    Ok((rpg, plan))
}

/// Binds every leaf to its features' interface references and verifies the
/// repo-wide feature-to-interface map is total and single-valued.
pub fn bind_interfaces(rpg: &mut Rpg, specs: &[InterfaceSpec]) -> Result<(), DesignError> {
    let mut by_feature: BTreeMap<&FeaturePath, &InterfaceSpec> = BTreeMap::new();
    for spec in specs {
        for feature in &spec.feature_paths {
            if by_feature.insert(feature, spec).is_some() {
                return Err(DesignError::DesignViolation(format!(
                    "feature {feature} mapped to more than one interface"
                )));
            }
        }
    }
    let leaf_ids: Vec<NodeId> = rpg
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Leaf)
        .map(|n| n.id.clone())
        .collect();
    for leaf_id in leaf_ids {
        let features: Vec<FeaturePath> = rpg
            .node(&leaf_id)
            .expect("leaf exists")
            .feature_paths
            .iter()
            .cloned()
            .collect();
        let mut refs = BTreeSet::new();
        for feature in &features {
            let spec = by_feature.get(feature).ok_or_else(|| {
                DesignError::DesignViolation(format!(
                    "feature {feature} left without an interface"
                ))
            })?;
            refs.insert(spec.reference_for(feature));
        }
        rpg.node_mut(&leaf_id).expect("leaf exists").structure =
            Some(Binding::Interfaces(refs));
    }
    Ok(())
}

/// Transitive dataflow ancestors per root.
fn dataflow_ancestors(rpg: &Rpg) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let order = flow_order(rpg);
    let mut ancestors: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for id in &order {
        let mut acc: BTreeSet<NodeId> = BTreeSet::new();
        for e in &rpg.edges {
            if let RpgEdge::Dataflow { from, to, .. } = e {
                if to == id {
                    acc.insert(from.clone());
                    if let Some(up) = ancestors.get(from) {
                        acc.extend(up.iter().cloned());
                    }
                }
            }
        }
        ancestors.insert(id.clone(), acc);
    }
    ancestors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Backend, BackendError, CompletionRequest, Oracle, ScriptedBackend};
    use std::sync::Mutex;

    fn solution(json: &str) -> String {
        format!("<solution>\n{json}\n</solution>")
    }

    fn proposal_graph() -> Rpg {
        let mut g = Rpg::new(Phase::Proposal);
        let mut add =
            |id: &str, label: &str, kind: NodeKind, feats: &[&str], parent: Option<&str>| {
                let mut n = RpgNode::new(id, label, kind);
                for f in feats {
                    n.feature_paths.insert(f.parse().unwrap());
                }
                g.nodes.push(n);
                if let Some(p) = parent {
                    g.edges.push(RpgEdge::Hierarchy {
                        from: NodeId::new(p),
                        to: NodeId::new(id),
                    });
                }
            };
        add("data-loading", "Data Loading", NodeKind::SubgraphRoot, &[], None);
        add("data-loading/loaders", "loaders", NodeKind::Component, &[], Some("data-loading"));
        add(
            "data-loading/loaders/csv",
            "csv loading",
            NodeKind::Leaf,
            &["Data Loading/csv loading"],
            Some("data-loading/loaders"),
        );
        add(
            "data-loading/loaders/norm",
            "data normalization",
            NodeKind::Leaf,
            &["Data Loading/data normalization"],
            Some("data-loading/loaders"),
        );
        add("algorithms", "Algorithms", NodeKind::SubgraphRoot, &[], None);
        add(
            "algorithms/linreg",
            "linear regression",
            NodeKind::Leaf,
            &["Algorithms/linear regression"],
            Some("algorithms"),
        );
        add(
            "algorithms/baseline",
            "mean value baseline",
            NodeKind::Leaf,
            &["Algorithms/mean value baseline"],
            Some("algorithms"),
        );
        add("evaluation", "Evaluation", NodeKind::SubgraphRoot, &[], None);
        add("evaluation/metrics", "metrics", NodeKind::Component, &[], Some("evaluation"));
        add(
            "evaluation/metrics/mse",
            "mse metric",
            NodeKind::Leaf,
            &["Evaluation/mse metric"],
            Some("evaluation/metrics"),
        );
        add(
            "evaluation/metrics/report",
            "evaluation report",
            NodeKind::Leaf,
            &["Evaluation/evaluation report"],
            Some("evaluation/metrics"),
        );
        assert!(g.validate().is_empty(), "fixture must be valid: {:?}", g.validate());
        g
    }

    fn folders_payload() -> String {
        solution(
            r#"{"src": {"data_loading": ["Data Loading"], "algorithms": ["Algorithms"], "evaluation": ["Evaluation"], "common": {}}, "README.md": null}"#,
        )
    }

    fn scripted(pairs: &[(&str, &str)]) -> Oracle {
        let mut backend = ScriptedBackend::new();
        for (template, response) in pairs {
            backend.push(*template, *response);
        }
        Oracle::new(Box::new(backend))
    }

    #[test]
    fn folders_bind_each_root_to_distinct_normalized_dir() {
        let rpg = proposal_graph();
        let oracle = scripted(&[("encode_folders", &folders_payload())]);
        let (enriched, plan) = encode_folders(&rpg, &oracle, "mlcore").unwrap();
        assert_eq!(
            plan.root_dirs.get(&NodeId::new("data-loading")).unwrap(),
            "src/data_loading"
        );
        assert_eq!(plan.root_dirs.len(), 3);
        assert!(plan.folders.contains("src/common"));
        assert!(plan.extra_files.contains("README.md"));
        let root = enriched.node(&NodeId::new("algorithms")).unwrap();
        assert_eq!(root.structure, Some(Binding::Dir("src/algorithms".into())));
    }

    #[test]
    fn folder_names_are_normalized_with_rename_records() {
        let mut rpg = Rpg::new(Phase::Proposal);
        rpg.nodes.push(RpgNode::new("ml", "ML Models", NodeKind::SubgraphRoot));
        let payload = solution(r#"{"src": {"ML Models": ["ML Models"]}}"#);
        let oracle = scripted(&[("encode_folders", &payload)]);
        let (_, plan) = encode_folders(&rpg, &oracle, "demo").unwrap();
        assert_eq!(plan.root_dirs.get(&NodeId::new("ml")).unwrap(), "src/ml_models");
        assert_eq!(plan.renames.get("src/ml_models").unwrap(), "ML Models");
    }

    #[test]
    fn folder_mapped_to_two_subtrees_rejected_with_both_roots() {
        let rpg = proposal_graph();
        let payload = solution(
            r#"{"src": {"core": ["Algorithms", "Evaluation"], "data_loading": ["Data Loading"]}}"#,
        );
        let oracle = scripted(&[("encode_folders", &payload)]);
        match encode_folders(&rpg, &oracle, "mlcore") {
            Err(DesignError::DirConflict { dir, roots }) => {
                assert_eq!(dir, "src/core");
                assert_eq!(roots.len(), 2);
                assert!(roots.contains(&NodeId::new("algorithms")));
                assert!(roots.contains(&NodeId::new("evaluation")));
            }
            other => panic!("expected DirConflict, got {other:?}"),
        }
    }

    #[test]
    fn folder_payload_missing_a_root_rejected() {
        let rpg = proposal_graph();
        let payload = solution(r#"{"src": {"algorithms": ["Algorithms"], "evaluation": ["Evaluation"]}}"#);
        let oracle = scripted(&[("encode_folders", &payload)]);
        match encode_folders(&rpg, &oracle, "mlcore") {
            Err(DesignError::Protocol { message, .. }) => {
                assert!(message.contains("data-loading"), "got {message}");
            }
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    fn encode_folders_then_files(rounds: &[(&str, &str)]) -> (Rpg, FilePlan) {
        let rpg = proposal_graph();
        let mut pairs = vec![("encode_folders", folders_payload())];
        for (t, r) in rounds {
            pairs.push((t, r.to_string()));
        }
        let mut backend = ScriptedBackend::new();
        for (t, r) in &pairs {
            backend.push(t, r);
        }
        let oracle = Oracle::new(Box::new(backend));
        let (rpg, _) = encode_folders(&rpg, &oracle, "mlcore").unwrap();
        let (rpg, plan) = encode_files(&rpg, &oracle, "mlcore", 3).unwrap();
        (rpg, plan)
    }

    fn standard_file_rounds() -> Vec<(&'static str, String)> {
        // Roots are processed in id order: algorithms, data-loading, evaluation.
        vec![
            (
                "encode_files",
                solution(
                    r#"{"src/algorithms/linear_regression.py": ["Algorithms/linear regression"], "src/algorithms/baselines.py": ["Algorithms/mean value baseline"]}"#,
                ),
            ),
            (
                "encode_files",
                solution(
                    r#"{"src/data_loading/loader.py": ["Data Loading/csv loading", "Data Loading/data normalization"]}"#,
                ),
            ),
            (
                "encode_files",
                solution(
                    r#"{"src/evaluation/metrics.py": ["Evaluation/mse metric"], "src/evaluation/report.py": ["Evaluation/evaluation report"]}"#,
                ),
            ),
        ]
    }

    #[test]
    fn files_bind_under_components_with_synthetic_insertion() {
        let rounds = standard_file_rounds();
        let rounds_ref: Vec<(&str, &str)> =
            rounds.iter().map(|(t, r)| (*t, r.as_str())).collect();
        let (rpg, plan) = encode_folders_then_files(&rounds_ref);

        // The loaders component carries the loader file.
        let loaders = rpg.node(&NodeId::new("data-loading/loaders")).unwrap();
        assert_eq!(
            loaders.structure,
            Some(Binding::Files(BTreeSet::from(["src/data_loading/loader.py".to_string()])))
        );

        // Direct leaves of the algorithms root got synthetic components.
        let linreg_parent = rpg.parent(&NodeId::new("algorithms/linreg")).unwrap();
        let parent_node = rpg.node(linreg_parent).unwrap();
        assert_eq!(parent_node.kind, NodeKind::Component);
        assert!(matches!(&parent_node.structure, Some(Binding::Files(f)) if f.len() == 1));
        assert!(rpg.validate().is_empty(), "graph stays valid: {:?}", rpg.validate());
        assert_eq!(plan.files.len(), 5);
    }

    #[test]
    fn file_assignment_iterates_until_everything_is_placed() {
        // The algorithms root takes two rounds: the first response leaves the
        // baseline feature unassigned.
        let rounds = vec![
            (
                "encode_files",
                solution(r#"{"src/algorithms/linear_regression.py": ["Algorithms/linear regression"]}"#),
            ),
            (
                "encode_files",
                solution(r#"{"src/algorithms/baselines.py": ["Algorithms/mean value baseline"]}"#),
            ),
            (
                "encode_files",
                solution(
                    r#"{"src/data_loading/loader.py": ["Data Loading/csv loading", "Data Loading/data normalization"]}"#,
                ),
            ),
            (
                "encode_files",
                solution(
                    r#"{"src/evaluation/metrics.py": ["Evaluation/mse metric", "Evaluation/evaluation report"]}"#,
                ),
            ),
        ];
        let rounds_ref: Vec<(&str, &str)> =
            rounds.iter().map(|(t, r)| (*t, r.as_str())).collect();
        let (_, plan) = encode_folders_then_files(&rounds_ref);
        assert_eq!(plan.rounds_used.get(&NodeId::new("algorithms")), Some(&2));
        assert_eq!(plan.rounds_used.get(&NodeId::new("data-loading")), Some(&1));
    }

    #[test]
    fn leaf_unassigned_after_round_cap_is_a_typed_error() {
        let rpg = proposal_graph();
        let mut backend = ScriptedBackend::new();
        backend.push("encode_folders", &folders_payload());
        for _ in 0..3 {
            backend.push("encode_files", &solution("{}"));
        }
        let oracle = Oracle::new(Box::new(backend));
        let (rpg, _) = encode_folders(&rpg, &oracle, "mlcore").unwrap();
        match encode_files(&rpg, &oracle, "mlcore", 3) {
            Err(DesignError::Unassigned { root, rounds, leaves }) => {
                assert_eq!(root, NodeId::new("algorithms"));
                assert_eq!(rounds, 3);
                assert_eq!(leaves.len(), 2);
            }
            other => panic!("expected Unassigned, got {other:?}"),
        }
    }

    #[test]
    fn file_outside_root_prefix_is_rejected() {
        let rpg = proposal_graph();
        let mut backend = ScriptedBackend::new();
        backend.push("encode_folders", &folders_payload());
        backend.push(
            "encode_files",
            &solution(r#"{"src/elsewhere/a.py": ["Algorithms/linear regression"]}"#),
        );
        let oracle = Oracle::new(Box::new(backend));
        let (rpg, _) = encode_folders(&rpg, &oracle, "mlcore").unwrap();
        match encode_files(&rpg, &oracle, "mlcore", 3) {
            Err(DesignError::Protocol { message, .. }) => {
                assert!(message.contains("outside root directory"), "got {message}");
            }
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn thirty_leaf_assignment_preserves_leaf_set_and_prefix() {
        // Independent set-equality + prefix oracle over a 30-leaf fixture.
        let mut g = Rpg::new(Phase::Proposal);
        let roots = ["alpha", "beta", "gamma"];
        for root in roots {
            let mut r = RpgNode::new(root, root, NodeKind::SubgraphRoot);
            r.structure = Some(Binding::Dir(format!("src/{root}")));
            g.nodes.push(r);
            let comp_id = format!("{root}/core");
            g.nodes.push(RpgNode::new(&comp_id, "core", NodeKind::Component));
            g.edges.push(RpgEdge::Hierarchy {
                from: NodeId::new(root),
                to: NodeId::new(&comp_id),
            });
            for i in 0..10 {
                let leaf_id = format!("{root}/core/f{i}");
                let mut leaf = RpgNode::new(&leaf_id, format!("f{i}"), NodeKind::Leaf);
                leaf.feature_paths.insert(format!("{root}/feature {i}").parse().unwrap());
                g.nodes.push(leaf);
                g.edges.push(RpgEdge::Hierarchy {
                    from: NodeId::new(&comp_id),
                    to: NodeId::new(&leaf_id),
                });
            }
        }
        assert!(g.validate().is_empty());

        // Deterministic stub: files each feature under its root in pairs.
        struct Assigner;
        impl Backend for Assigner {
            fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
                let root = ["alpha", "beta", "gamma"]
                    .iter()
                    .find(|r| request.prompt.contains(&format!("src/{r}")))
                    .expect("root dir in prompt");
                let mut entries = Vec::new();
                for j in 0..5 {
                    entries.push(format!(
                        "\"src/{root}/part{j}.py\": [\"{root}/feature {}\", \"{root}/feature {}\"]",
                        2 * j,
                        2 * j + 1
                    ));
                }
                Ok(format!("<solution>\n{{{}}}\n</solution>", entries.join(", ")))
            }
        }
        let oracle = Oracle::new(Box::new(Assigner));
        let (enriched, plan) = encode_files(&g, &oracle, "fixture", 3).unwrap();

        // Set equality: the union of assigned features equals the leaf set.
        let assigned: BTreeSet<FeaturePath> =
            plan.files.values().flat_map(|s| s.iter().cloned()).collect();
        let expected: BTreeSet<FeaturePath> = g
            .leaves()
            .iter()
            .flat_map(|l| l.feature_paths.iter().cloned())
            .collect();
        assert_eq!(assigned, expected);
        assert_eq!(expected.len(), 30);

        // Prefix check straight off the enriched bindings.
        for root in enriched.roots() {
            let Some(Binding::Dir(dir)) = &root.structure else { panic!() };
            for node in enriched.descendants(&root.id) {
                for file in node.bound_files() {
                    assert!(
                        file.starts_with(&format!("{dir}/")),
                        "{file} escapes {dir}"
                    );
                }
            }
        }
        assert!(enriched.validate().is_empty());
    }

    fn flows_good_payload() -> String {
        solution(
            r#"[{"from": "Data Loading", "to": "Algorithms", "data_id": "training_frame", "data_type": "list[dict]", "transformation": "none"}, {"from": "Algorithms", "to": "Evaluation", "data_id": "predictions", "data_type": "list[float]", "transformation": "none"}]"#,
        )
    }

    fn flows_cyclic_payload() -> String {
        solution(
            r#"[{"from": "Data Loading", "to": "Algorithms", "data_id": "a", "data_type": "x", "transformation": "none"}, {"from": "Algorithms", "to": "Data Loading", "data_id": "b", "data_type": "x", "transformation": "none"}, {"from": "Algorithms", "to": "Evaluation", "data_id": "c", "data_type": "x", "transformation": "none"}]"#,
        )
    }

    fn file_order_payloads() -> Vec<(&'static str, String)> {
        // Multi-file roots in id order: algorithms, evaluation.
        vec![
            (
                "encode_file_order",
                solution(
                    r#"{"ordered_files": ["src/algorithms/linear_regression.py", "src/algorithms/baselines.py"]}"#,
                ),
            ),
            (
                "encode_file_order",
                solution(
                    r#"{"ordered_files": ["src/evaluation/metrics.py", "src/evaluation/report.py"]}"#,
                ),
            ),
        ]
    }

    fn graph_with_files() -> (Rpg, FilePlan) {
        let rounds = standard_file_rounds();
        let rounds_ref: Vec<(&str, &str)> =
            rounds.iter().map(|(t, r)| (*t, r.as_str())).collect();
        encode_folders_then_files(&rounds_ref)
    }

    #[test]
    fn cyclic_flow_proposal_is_rejected_then_retried() {
        let (rpg, _) = graph_with_files();
        let mut backend = ScriptedBackend::new();
        backend.push("encode_data_flows", &flows_cyclic_payload());
        backend.push("encode_data_flows", &flows_good_payload());
        for (t, r) in file_order_payloads() {
            backend.push(t, &r);
        }
        let oracle = Oracle::new(Box::new(backend));
        let (enriched, summary) = encode_data_flows(&rpg, &oracle, "mlcore", 3).unwrap();
        assert_eq!(summary.attempts, 2);
        assert_eq!(summary.records.len(), 2);
        assert_eq!(enriched.phase, Phase::Implementation);
        let flow_count = enriched
            .edges
            .iter()
            .filter(|e| matches!(e, RpgEdge::Dataflow { .. }))
            .count();
        assert_eq!(flow_count, 2);
    }

    #[test]
    fn flow_retries_exhausted_is_a_typed_error() {
        let (rpg, _) = graph_with_files();
        let mut backend = ScriptedBackend::new();
        for _ in 0..3 {
            backend.push("encode_data_flows", &flows_cyclic_payload());
        }
        let oracle = Oracle::new(Box::new(backend));
        match encode_data_flows(&rpg, &oracle, "mlcore", 3) {
            Err(DesignError::FlowRejected { attempts, last_report }) => {
                assert_eq!(attempts, 3);
                assert!(last_report.contains("cycle"), "got {last_report}");
            }
            other => panic!("expected FlowRejected, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_flow_proposal_is_rejected() {
        let (rpg, _) = graph_with_files();
        // Single edge leaves the evaluation root untouched.
        let disconnected = solution(
            r#"[{"from": "Data Loading", "to": "Algorithms", "data_id": "a", "data_type": "x", "transformation": "none"}]"#,
        );
        let mut backend = ScriptedBackend::new();
        backend.push("encode_data_flows", &disconnected);
        backend.push("encode_data_flows", &flows_good_payload());
        for (t, r) in file_order_payloads() {
            backend.push(t, &r);
        }
        let oracle = Oracle::new(Box::new(backend));
        let (_, summary) = encode_data_flows(&rpg, &oracle, "mlcore", 3).unwrap();
        assert_eq!(summary.attempts, 2);
    }

    #[test]
    fn file_order_chains_components_and_respects_topology() {
        let (rpg, _) = graph_with_files();
        let mut backend = ScriptedBackend::new();
        backend.push("encode_data_flows", &flows_good_payload());
        // Order baselines before linear regression to show the payload wins.
        backend.push(
            "encode_file_order",
            &solution(
                r#"{"ordered_files": ["src/algorithms/baselines.py", "src/algorithms/linear_regression.py"]}"#,
            ),
        );
        backend.push(
            "encode_file_order",
            &solution(
                r#"{"ordered_files": ["src/evaluation/metrics.py", "src/evaluation/report.py"]}"#,
            ),
        );
        let oracle = Oracle::new(Box::new(backend));
        let (enriched, summary) = encode_data_flows(&rpg, &oracle, "mlcore", 3).unwrap();
        assert_eq!(
            summary.ordered_files.get(&NodeId::new("algorithms")).unwrap()[0],
            "src/algorithms/baselines.py"
        );
        let order_edges: Vec<(&NodeId, &NodeId)> = enriched
            .edges
            .iter()
            .filter_map(|e| match e {
                RpgEdge::Order { from, to } => Some((from, to)),
                _ => None,
            })
            .collect();
        // Evaluation's two files share one component, so only the algorithms
        // subtree produces a chain.
        assert_eq!(order_edges.len(), 1);
        let baseline_comp = enriched.parent(&NodeId::new("algorithms/baseline")).unwrap();
        let linreg_comp = enriched.parent(&NodeId::new("algorithms/linreg")).unwrap();
        assert!(order_edges.contains(&(baseline_comp, linreg_comp)));
    }

    #[test]
    fn file_order_must_be_a_permutation() {
        let (rpg, _) = graph_with_files();
        let mut backend = ScriptedBackend::new();
        backend.push("encode_data_flows", &flows_good_payload());
        backend.push(
            "encode_file_order",
            &solution(r#"{"ordered_files": ["src/algorithms/baselines.py"]}"#),
        );
        let oracle = Oracle::new(Box::new(backend));
        match encode_data_flows(&rpg, &oracle, "mlcore", 3) {
            Err(DesignError::Protocol { message, .. }) => {
                assert!(message.contains("permutation"), "got {message}");
            }
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    fn base_sections_payload() -> String {
        "<solution>\n## General\n### src/common/base.py\n```python\nfrom typing import Any\n\n\nclass BaseComponent:\n    \"\"\"Lifecycle anchor shared by every pipeline stage.\"\"\"\n\n    def setup(self, config: Any) -> None:\n        pass\n\n\nclass EstimatorComponent(BaseComponent):\n    \"\"\"Estimator lifecycle with fit and predict.\"\"\"\n\n    def fit(self, features: Any, targets: Any) -> Any:\n        pass\n\n    def predict(self, features: Any) -> Any:\n        pass\n```\n</solution>".to_string()
    }

    #[test]
    fn degree_summary_feeds_raw_degrees_to_the_oracle() {
        let (rpg, _) = graph_with_files();
        let mut backend = ScriptedBackend::new();
        backend.push("encode_data_flows", &flows_good_payload());
        for (t, r) in file_order_payloads() {
            backend.push(t, &r);
        }
        let oracle = Oracle::new(Box::new(backend));
        let (enriched, _) = encode_data_flows(&rpg, &oracle, "mlcore", 3).unwrap();

        let seen = std::sync::Arc::new(Mutex::new(String::new()));
        let seen_clone = seen.clone();
        let capture = crate::oracle::FnBackend(move |req: &CompletionRequest| {
            *seen_clone.lock().unwrap() = req.prompt.clone();
            Ok(base_sections_payload())
        });
        let oracle = Oracle::new(Box::new(capture));
        let bases =
            abstract_base_classes(&enriched, &oracle, "mlcore", "a small ml repo", 3).unwrap();
        let prompt = seen.lock().unwrap().clone();
        assert!(prompt.contains("Data Loading: out-degree 1, in-degree 0"), "got {prompt}");
        assert!(prompt.contains("Algorithms: out-degree 1, in-degree 1"));
        assert!(prompt.contains("Evaluation: out-degree 0, in-degree 1"));
        assert_eq!(bases.abstractions.len(), 2);
        let estimator =
            bases.abstractions.iter().find(|b| b.name == "EstimatorComponent").unwrap();
        assert_eq!(estimator.kind, BaseKind::FunctionalBaseClass);
        assert!(estimator.contract.contains("def fit"));
        assert_eq!(estimator.file, "src/common/base.py");
    }

    #[test]
    fn fields_only_class_is_a_shared_data_structure() {
        let payload = "<solution>\n## General\n### src/common/types.py\n```python\nclass Record:\n    \"\"\"Plain carrier for one row of data.\"\"\"\n\n    def __init__(self, values):\n        self.values = values\n```\n</solution>";
        let rpg = proposal_graph();
        let oracle = scripted(&[("base_classes", payload)]);
        let bases = abstract_base_classes(&rpg, &oracle, "x", "y", 3).unwrap();
        assert_eq!(bases.abstractions[0].kind, BaseKind::SharedDataStructure);
    }

    #[test]
    fn over_cap_base_proposals_truncate_by_rationale_length_then_name() {
        let mut classes = String::new();
        let rationales = [
            ("Alpha", "Shortest."),
            ("Beta", "A mid-sized rationale here."),
            ("Gamma", "A very long rationale explaining a great deal of shared behavior."),
            ("Delta", "A mid-sized rationale here."),
            ("Epsilon", "Another quite long rationale that justifies this abstraction well."),
        ];
        for (name, rationale) in rationales {
            classes.push_str(&format!(
                "class {name}:\n    \"\"\"{rationale}\"\"\"\n\n    def run(self) -> None:\n        pass\n\n\n"
            ));
        }
        let payload = format!(
            "<solution>\n## General\n### src/common/base.py\n```python\n{classes}```\n</solution>"
        );
        let rpg = proposal_graph();
        let oracle = scripted(&[("base_classes", &payload)]);
        let bases = abstract_base_classes(&rpg, &oracle, "x", "y", 3).unwrap();
        let names: Vec<&str> =
            bases.abstractions.iter().map(|b| b.name.as_str()).collect();
        // Longest rationales win; the two mid-sized tie on length and break
        // by name, so Beta stays and Delta drops. Survivors keep their
        // original proposal order.
        assert_eq!(names, vec!["Beta", "Gamma", "Epsilon"]);
        assert_eq!(bases.warnings.len(), 2);
        assert!(bases.warnings.iter().any(|w| w.contains("Alpha")));
        assert!(bases.warnings.iter().any(|w| w.contains("Delta")));
        let rebuilt = bases.file_sources.get("src/common/base.py").unwrap();
        assert!(rebuilt.contains("class Beta"));
        assert!(!rebuilt.contains("class Delta"));
    }

    fn design_section(features: &[&str], code: &str) -> String {
        format!(
            "design_itfs_for_feature(features=[{}]):\n```python\n{code}\n```\n",
            features.iter().map(|f| format!("\"{f}\"")).collect::<Vec<_>>().join(", ")
        )
    }

    fn doc(purpose: &str, params: &[&str]) -> String {
        let mut d = format!("\"\"\"{purpose}\n\n    Args:\n");
        for p in params {
            d.push_str(&format!("        {p}: Input {p}.\n"));
        }
        d.push_str("\n    Returns:\n        The computed value.\n\n    Raises:\n        ValueError: On invalid input.\n    \"\"\"");
        d
    }

    #[test]
    fn grouped_class_binds_features_to_methods() {
        let code = format!(
            "class DataLoader:\n    \"\"\"Loads datasets from disk.\"\"\"\n\n    def load_csv(self, path: str) -> list:\n        {}\n        pass\n\n    def load_json(self, path: str) -> list:\n        {}\n        pass",
            doc("Load a CSV file.", &["path"]).replace('\n', "\n        "),
            doc("Load a JSON file.", &["path"]).replace('\n', "\n        "),
        );
        let body = design_section(&["Data Loading/load_csv", "Data Loading/load_json"], &code);
        let response = format!("<solution>\n{body}</solution>");
        let oracle = scripted(&[("design_interfaces", &response)]);
        let features: Vec<FeaturePath> = vec![
            "Data Loading/load_csv".parse().unwrap(),
            "Data Loading/load_json".parse().unwrap(),
        ];
        let base_names = BTreeSet::new();
        let ctx = FileDesignContext {
            repo_name: "mlcore",
            repo_overview: "demo",
            subtree_label: "Data Loading",
            file: "src/data_loading/loader.py",
            features: &features,
            current_skeleton: "(empty)",
            dataflow_summary: "(none)",
            base_classes: "(none)",
            upstream_interfaces: "(none)",
            base_names: &base_names,
        };
        let specs = design_interfaces(&oracle, &ctx).unwrap();
        assert_eq!(specs.len(), 1);
        let spec = &specs[0];
        assert_eq!(spec.kind, InterfaceKind::Class);
        assert_eq!(spec.methods.len(), 2);
        assert_eq!(spec.feature_paths.len(), 2);
        let csv_ref = spec.reference_for(&features[0]);
        assert_eq!(csv_ref.kind, InterfaceKind::Method);
        assert_eq!(csv_ref.name, "DataLoader.load_csv");
    }

    #[test]
    fn missing_error_case_in_doc_contract_is_a_design_violation() {
        let code = "def load(path: str) -> list:\n    \"\"\"Load data.\n\n    Args:\n        path: Where to read from.\n\n    Returns:\n        Rows.\n    \"\"\"\n    pass";
        let body = design_section(&["Data Loading/load"], code);
        let response = format!("<solution>\n{body}</solution>");
        let oracle = scripted(&[("design_interfaces", &response)]);
        let features: Vec<FeaturePath> = vec!["Data Loading/load".parse().unwrap()];
        let base_names = BTreeSet::new();
        let ctx = FileDesignContext {
            repo_name: "x",
            repo_overview: "y",
            subtree_label: "Data Loading",
            file: "src/data_loading/loader.py",
            features: &features,
            current_skeleton: "(empty)",
            dataflow_summary: "(none)",
            base_classes: "(none)",
            upstream_interfaces: "(none)",
            base_names: &base_names,
        };
        match design_interfaces(&oracle, &ctx) {
            Err(DesignError::DesignViolation(msg)) => {
                assert!(msg.contains("error case"), "got {msg}");
                assert!(msg.contains("load"), "got {msg}");
            }
            other => panic!("expected DesignViolation, got {other:?}"),
        }
    }

    #[test]
    fn undocumented_parameter_is_a_design_violation() {
        let err = check_doc_contract(
            "function f",
            "f(alpha, beta) -> int",
            "Does things.\n\n    Args:\n        alpha: The alpha.\n\n    Returns:\n        x.\n\n    Raises:\n        ValueError: bad.",
        )
        .unwrap_err();
        assert!(err.to_string().contains("beta"), "got {err}");
    }

    #[test]
    fn signature_params_skip_self_and_star_markers() {
        assert_eq!(
            signature_params("f(self, a: int, b=2, *args, **kwargs) -> None"),
            vec!["a", "b", "args", "kwargs"]
        );
        assert_eq!(
            signature_params("g(x: dict[str, int], y) -> int"),
            vec!["x", "y"]
        );
    }

    fn full_pipeline_scripts() -> Vec<(&'static str, String)> {
        let mut pairs = vec![("encode_folders", folders_payload())];
        pairs.extend(standard_file_rounds());
        pairs.push(("encode_data_flows", flows_good_payload()));
        pairs.extend(file_order_payloads());
        pairs.push(("base_classes", base_sections_payload()));

        // Design responses in dataflow order: Data Loading, Algorithms,
        // Evaluation; files in encoded order within each root.
        let loader_code = format!(
            "class DataLoader:\n    \"\"\"Loads and normalizes datasets.\"\"\"\n\n    def csv_loading(self, path: str) -> list:\n        {}\n        pass\n\n    def data_normalization(self, rows: list) -> list:\n        {}\n        pass",
            doc("Load a CSV file.", &["path"]).replace('\n', "\n        "),
            doc("Scale rows to unit range.", &["rows"]).replace('\n', "\n        "),
        );
        let loader = format!(
            "<solution>\n{}</solution>",
            design_section(
                &["Data Loading/csv loading", "Data Loading/data normalization"],
                &loader_code
            )
        );
        pairs.push(("design_interfaces", loader));

        let linreg_code = format!(
            "class LinearRegression(EstimatorComponent):\n    \"\"\"Ordinary least squares on one feature.\"\"\"\n\n    def fit(self, features: list, targets: list) -> None:\n        {}\n        pass\n\n    def predict(self, features: list) -> list:\n        {}\n        pass",
            doc("Fit the model.", &["features", "targets"]).replace('\n', "\n        "),
            doc("Predict targets.", &["features"]).replace('\n', "\n        "),
        );
        pairs.push((
            "design_interfaces",
            format!(
                "<solution>\n{}</solution>",
                design_section(&["Algorithms/linear regression"], &linreg_code)
            ),
        ));

        let baseline_code = format!(
            "def mean_value_baseline(targets: list) -> float:\n    {}\n    pass",
            doc("Predict the mean of the targets.", &["targets"]).replace('\n', "\n    "),
        );
        pairs.push((
            "design_interfaces",
            format!(
                "<solution>\n{}</solution>",
                design_section(&["Algorithms/mean value baseline"], &baseline_code)
            ),
        ));

        let mse_code = format!(
            "def mse_metric(predictions: list, targets: list) -> float:\n    {}\n    pass",
            doc("Mean squared error.", &["predictions", "targets"]).replace('\n', "\n    "),
        );
        pairs.push((
            "design_interfaces",
            format!(
                "<solution>\n{}</solution>",
                design_section(&["Evaluation/mse metric"], &mse_code)
            ),
        ));

        let report_code = format!(
            "def evaluation_report(scores: dict) -> str:\n    {}\n    pass",
            doc("Render scores as a text report.", &["scores"]).replace('\n', "\n    "),
        );
        pairs.push((
            "design_interfaces",
            format!(
                "<solution>\n{}</solution>",
                design_section(&["Evaluation/evaluation report"], &report_code)
            ),
        ));
        pairs
    }

    fn run_full_pipeline() -> (Rpg, DesignPlan) {
        let rpg = proposal_graph();
        let mut backend = ScriptedBackend::new();
        for (t, r) in full_pipeline_scripts() {
            backend.push(t, &r);
        }
        let oracle = Oracle::new(Box::new(backend));
        plan_implementation(&rpg, &oracle, "mlcore", "a small ml pipeline", &ImplConfig::default())
            .unwrap()
    }

    #[test]
    fn full_pipeline_yields_valid_implementation_graph() {
        let (rpg, plan) = run_full_pipeline();
        assert_eq!(rpg.phase, Phase::Implementation);
        assert!(rpg.validate().is_empty(), "{:?}", rpg.validate());
        // Six features across five interfaces: the loader class groups two.
        assert_eq!(plan.interfaces.len(), 5);
        // Every leaf is bound to interfaces.
        for leaf in rpg.leaves() {
            assert!(
                matches!(&leaf.structure, Some(Binding::Interfaces(r)) if !r.is_empty()),
                "leaf {} unbound",
                leaf.id
            );
        }
        // Base link resolved against the abstraction set.
        let linreg = plan.interfaces.iter().find(|s| s.name == "LinearRegression").unwrap();
        assert_eq!(linreg.base_link.as_deref(), Some("EstimatorComponent"));
        // The feature-to-interface map is total over leaf features.
        let mut feature_count = 0;
        for spec in &plan.interfaces {
            feature_count += spec.feature_paths.len();
        }
        assert_eq!(feature_count, 6);
    }

    #[test]
    fn interface_design_is_stable_across_replays() {
        let (_, first) = run_full_pipeline();
        let (_, second) = run_full_pipeline();
        assert_eq!(first.interfaces, second.interfaces);
    }

    #[test]
    fn double_mapped_feature_is_rejected() {
        let code_a = format!(
            "def alpha(x: int) -> int:\n    {}\n    pass",
            doc("First.", &["x"]).replace('\n', "\n    ")
        );
        let code_b = format!(
            "def beta(x: int) -> int:\n    {}\n    pass",
            doc("Second.", &["x"]).replace('\n', "\n    ")
        );
        let response = format!(
            "<solution>\n{}{}</solution>",
            design_section(&["Root/thing"], &code_a),
            design_section(&["Root/thing"], &code_b),
        );
        let oracle = scripted(&[("design_interfaces", &response)]);
        let features: Vec<FeaturePath> = vec!["Root/thing".parse().unwrap()];
        let base_names = BTreeSet::new();
        let ctx = FileDesignContext {
            repo_name: "x",
            repo_overview: "y",
            subtree_label: "Root",
            file: "src/root/thing.py",
            features: &features,
            current_skeleton: "(empty)",
            dataflow_summary: "(none)",
            base_classes: "(none)",
            upstream_interfaces: "(none)",
            base_names: &base_names,
        };
        match design_interfaces(&oracle, &ctx) {
            Err(DesignError::DesignViolation(msg)) => {
                assert!(msg.contains("more than one interface"), "got {msg}");
            }
            other => panic!("expected DesignViolation, got {other:?}"),
        }
    }
}
