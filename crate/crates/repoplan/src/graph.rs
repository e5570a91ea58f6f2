//! The repository planning graph: typed nodes and edges, invariant
//! validation, leaf ordering, and the JSON document format.
//!
//! Nodes carry dual semantics. The `label` names a capability; the
//! `structure` binding names where it lives on disk. Subgraph roots bind
//! directories, components bind one or more files, and leaves bind interface
//! references. Three edge kinds connect them: `hierarchy` edges form the
//! rooted forest of subgraphs, `dataflow` edges connect subgraph roots into
//! an inter-module DAG, and `order` edges sequence file-bearing components
//! within one subgraph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ontology::FeaturePath;

/// Stable node identifier, unique within one graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Functional role of a node within its subgraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "subgraph-root")]
    SubgraphRoot,
    #[serde(rename = "component")]
    Component,
    #[serde(rename = "leaf")]
    Leaf,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::SubgraphRoot => "subgraph-root",
            NodeKind::Component => "component",
            NodeKind::Leaf => "leaf",
        };
        f.write_str(s)
    }
}

/// Kind of a planned interface a leaf can reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceKind {
    Function,
    Class,
    Method,
}

impl fmt::Display for InterfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InterfaceKind::Function => "function",
            InterfaceKind::Class => "class",
            InterfaceKind::Method => "method",
        };
        f.write_str(s)
    }
}

/// Reference from a leaf node to a planned interface.
///
/// `name` is the qualified name within the file: `load_csv` for a function,
/// `DataLoader` for a class, `DataLoader.load_csv` for a method.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InterfaceRef {
    pub file: String,
    pub name: String,
    pub kind: InterfaceKind,
}

impl InterfaceRef {
    pub fn new(file: impl Into<String>, name: impl Into<String>, kind: InterfaceKind) -> Self {
        InterfaceRef { file: file.into(), name: name.into(), kind }
    }

    /// Descriptor in `kind: name` form, e.g. `method: DataLoader.load_csv`.
    pub fn descriptor(&self) -> String {
        format!("{}: {}", self.kind, self.name)
    }
}

/// Structural binding of a node onto the repository tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    /// Directory owned by a subgraph root.
    #[serde(rename = "dir")]
    Dir(String),
    /// Files carried by a component; one component may own several files.
    #[serde(rename = "files")]
    Files(BTreeSet<String>),
    /// Interfaces realized by a leaf.
    #[serde(rename = "interfaces")]
    Interfaces(BTreeSet<InterfaceRef>),
}

/// One node of the planning graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpgNode {
    pub id: NodeId,
    pub label: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub feature_paths: BTreeSet<FeaturePath>,
    #[serde(default)]
    pub structure: Option<Binding>,
}

impl RpgNode {
    pub fn new(id: impl Into<String>, label: impl Into<String>, kind: NodeKind) -> Self {
        RpgNode {
            id: NodeId::new(id),
            label: label.into(),
            kind,
            feature_paths: BTreeSet::new(),
            structure: None,
        }
    }

    /// Files this node binds, regardless of kind: a component's file set, or
    /// the distinct files of a leaf's interface references.
    pub fn bound_files(&self) -> BTreeSet<&str> {
        match &self.structure {
            Some(Binding::Files(files)) => files.iter().map(|f| f.as_str()).collect(),
            Some(Binding::Interfaces(refs)) => refs.iter().map(|r| r.file.as_str()).collect(),
            _ => BTreeSet::new(),
        }
    }
}

/// One edge of the planning graph. The dataflow payload describes what is
/// exchanged: a unique `data_id`, the `data_type` of the exchanged value, and
/// the `transformation` applied en route ("none" when passed through).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RpgEdge {
    Hierarchy {
        from: NodeId,
        to: NodeId,
    },
    Dataflow {
        from: NodeId,
        to: NodeId,
        data_id: String,
        data_type: String,
        transformation: String,
    },
    Order {
        from: NodeId,
        to: NodeId,
    },
}

impl RpgEdge {
    pub fn from(&self) -> &NodeId {
        match self {
            RpgEdge::Hierarchy { from, .. }
            | RpgEdge::Dataflow { from, .. }
            | RpgEdge::Order { from, .. } => from,
        }
    }

    pub fn to(&self) -> &NodeId {
        match self {
            RpgEdge::Hierarchy { to, .. }
            | RpgEdge::Dataflow { to, .. }
            | RpgEdge::Order { to, .. } => to,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RpgEdge::Hierarchy { .. } => "hierarchy",
            RpgEdge::Dataflow { .. } => "dataflow",
            RpgEdge::Order { .. } => "order",
        }
    }

    /// Sort key used for canonical edge ordering in serialized documents.
    fn sort_key(&self) -> (u8, &str, &str, &str) {
        match self {
            RpgEdge::Hierarchy { from, to } => (0, from.as_str(), to.as_str(), ""),
            RpgEdge::Dataflow { from, to, data_id, .. } => {
                (1, from.as_str(), to.as_str(), data_id.as_str())
            }
            RpgEdge::Order { from, to } => (2, from.as_str(), to.as_str(), ""),
        }
    }
}

/// Pipeline phase recorded on the graph. Proposal-stage graphs legitimately
/// have no dataflow edges; the full-connectivity invariant only applies once
/// data-flow encoding has completed and the phase is `Implementation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Proposal,
    Implementation,
}

/// The repository planning graph. Values are immutable snapshots: pipeline
/// stages build enriched copies rather than mutating in place, so a graph can
/// be shared read-only across workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Rpg {
    pub phase: Phase,
    pub nodes: Vec<RpgNode>,
    pub edges: Vec<RpgEdge>,
}

/// A single invariant violation found by [`Rpg::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Name of the violated invariant, e.g. `dataflow-acyclic`.
    pub invariant: String,
    /// Ids of the offending nodes (or edge endpoints).
    pub nodes: Vec<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.invariant, self.message)
    }
}

/// Outcome of validating a graph; empty iff every invariant holds.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, invariant: &str, nodes: Vec<NodeId>, message: impl Into<String>) {
        self.violations.push(Violation {
            invariant: invariant.to_string(),
            nodes,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Errors raised by graph operations.
#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("graph failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("graph document rejected at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

impl Rpg {
    pub fn new(phase: Phase) -> Self {
        Rpg { phase, nodes: Vec::new(), edges: Vec::new() }
    }

    pub fn node(&self, id: &NodeId) -> Option<&RpgNode> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut RpgNode> {
        self.nodes.iter_mut().find(|n| &n.id == id)
    }

    /// Parent of `id` under hierarchy edges, if any.
    pub fn parent(&self, id: &NodeId) -> Option<&NodeId> {
        self.edges.iter().find_map(|e| match e {
            RpgEdge::Hierarchy { from, to } if to == id => Some(from),
            _ => None,
        })
    }

    /// Children of `id` under hierarchy edges, in canonical (label, id) order.
    pub fn children(&self, id: &NodeId) -> Vec<&RpgNode> {
        let mut out: Vec<&RpgNode> = self
            .edges
            .iter()
            .filter_map(|e| match e {
                RpgEdge::Hierarchy { from, to } if from == id => self.node(to),
                _ => None,
            })
            .collect();
        out.sort_by(|a, b| (&a.label, &a.id).cmp(&(&b.label, &b.id)));
        out
    }

    /// Roots of the hierarchy forest, in canonical (label, id) order.
    pub fn roots(&self) -> Vec<&RpgNode> {
        let children: BTreeSet<&NodeId> = self
            .edges
            .iter()
            .filter_map(|e| match e {
                RpgEdge::Hierarchy { to, .. } => Some(to),
                _ => None,
            })
            .collect();
        let mut out: Vec<&RpgNode> =
            self.nodes.iter().filter(|n| !children.contains(&n.id)).collect();
        out.sort_by(|a, b| (&a.label, &a.id).cmp(&(&b.label, &b.id)));
        out
    }

    /// The subgraph root governing `id`: the topmost hierarchy ancestor.
    /// Returns `id` itself for root nodes. `None` if a parent reference is
    /// dangling or a hierarchy cycle prevents reaching a root.
    pub fn subgraph_root(&self, id: &NodeId) -> Option<&NodeId> {
        let mut cur = id;
        let mut hops = 0usize;
        while let Some(p) = self.parent(cur) {
            cur = p;
            hops += 1;
            if hops > self.nodes.len() {
                return None;
            }
        }
        self.node(cur).map(|n| &n.id)
    }

    /// All descendants of `id` (excluding `id`), depth-first.
    pub fn descendants(&self, id: &NodeId) -> Vec<&RpgNode> {
        let mut out = Vec::new();
        let mut stack: Vec<&NodeId> = vec![id];
        let mut guard = 0usize;
        while let Some(cur) = stack.pop() {
            guard += 1;
            if guard > self.nodes.len().saturating_add(1) * 2 {
                break;
            }
            for child in self.children(cur) {
                out.push(child);
                stack.push(&child.id);
            }
        }
        out
    }

    /// Leaf-kind nodes in arbitrary storage order.
    pub fn leaves(&self) -> Vec<&RpgNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Leaf).collect()
    }

    /// Checks every graph invariant and reports each violation with the
    /// invariant's name and the offending node ids. Violations are data, not
    /// failures: callers decide whether a nonempty report is fatal.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        for n in &self.nodes {
            *ids.entry(n.id.as_str()).or_default() += 1;
        }
        for (id, count) in &ids {
            if *count > 1 {
                report.push(
                    "unique-node-ids",
                    vec![NodeId::new(*id)],
                    format!("node id {id} appears {count} times"),
                );
            }
        }

        for e in &self.edges {
            for endpoint in [e.from(), e.to()] {
                if self.node(endpoint).is_none() {
                    report.push(
                        "edge-endpoints-exist",
                        vec![endpoint.clone()],
                        format!("{} edge references unknown node {endpoint}", e.kind_name()),
                    );
                }
            }
        }
        if !report.is_empty() {
            // Structural checks below assume resolvable ids.
            return report;
        }

        self.check_hierarchy(&mut report);
        self.check_dataflow(&mut report);
        self.check_order(&mut report);
        self.check_bindings(&mut report);
        report
    }

    fn check_hierarchy(&self, report: &mut ValidationReport) {
        let mut parents: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
        for e in &self.edges {
            if let RpgEdge::Hierarchy { from, to } = e {
                parents.entry(to).or_default().push(from);
            }
        }
        for (child, ps) in &parents {
            if ps.len() > 1 {
                report.push(
                    "hierarchy-single-parent",
                    vec![(*child).clone()],
                    format!("node {child} has {} hierarchy parents", ps.len()),
                );
            }
        }
        if let Some(cycle) = find_cycle(
            self.nodes.iter().map(|n| &n.id),
            self.edges.iter().filter_map(|e| match e {
                RpgEdge::Hierarchy { from, to } => Some((from, to)),
                _ => None,
            }),
        ) {
            report.push(
                "hierarchy-acyclic",
                cycle.clone(),
                format!("hierarchy edges form a cycle through {}", join_ids(&cycle)),
            );
            return;
        }
        for root in self.roots() {
            if root.kind != NodeKind::SubgraphRoot {
                report.push(
                    "hierarchy-roots-are-subgraph-roots",
                    vec![root.id.clone()],
                    format!("forest root {} has kind {}", root.id, root.kind),
                );
            }
        }
        for n in &self.nodes {
            if n.kind == NodeKind::SubgraphRoot && self.parent(&n.id).is_some() {
                report.push(
                    "subgraph-roots-unparented",
                    vec![n.id.clone()],
                    format!("subgraph-root {} has a hierarchy parent", n.id),
                );
            }
            if n.kind == NodeKind::Leaf && !self.children(&n.id).is_empty() {
                report.push(
                    "leaves-childless",
                    vec![n.id.clone()],
                    format!("leaf {} has hierarchy children", n.id),
                );
            }
        }
    }

    fn check_dataflow(&self, report: &mut ValidationReport) {
        let flow_edges: Vec<(&NodeId, &NodeId)> = self
            .edges
            .iter()
            .filter_map(|e| match e {
                RpgEdge::Dataflow { from, to, .. } => Some((from, to)),
                _ => None,
            })
            .collect();
        for (from, to) in &flow_edges {
            for endpoint in [*from, *to] {
                if let Some(n) = self.node(endpoint) {
                    if n.kind != NodeKind::SubgraphRoot {
                        report.push(
                            "dataflow-connects-roots",
                            vec![endpoint.clone()],
                            format!(
                                "dataflow edge endpoint {endpoint} has kind {}, expected subgraph-root",
                                n.kind
                            ),
                        );
                    }
                }
            }
        }
        let roots: Vec<&NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::SubgraphRoot)
            .map(|n| &n.id)
            .collect();
        if let Some(cycle) = find_cycle(roots.iter().copied(), flow_edges.iter().copied()) {
            report.push(
                "dataflow-acyclic",
                cycle.clone(),
                format!("dataflow edges form a cycle through {}", join_ids(&cycle)),
            );
        }
        if self.phase == Phase::Implementation && roots.len() >= 2 {
            let mut touched: BTreeSet<&NodeId> = BTreeSet::new();
            for (from, to) in &flow_edges {
                touched.insert(from);
                touched.insert(to);
            }
            for root in roots {
                if !touched.contains(root) {
                    report.push(
                        "dataflow-full-connectivity",
                        vec![root.clone()],
                        format!("subgraph-root {root} appears in no dataflow edge"),
                    );
                }
            }
        }
    }

    fn check_order(&self, report: &mut ValidationReport) {
        let mut per_subgraph: BTreeMap<&NodeId, Vec<(&NodeId, &NodeId)>> = BTreeMap::new();
        for e in &self.edges {
            let RpgEdge::Order { from, to } = e else { continue };
            for endpoint in [from, to] {
                let Some(n) = self.node(endpoint) else { continue };
                let file_bearing = n.kind == NodeKind::Component
                    && matches!(&n.structure, Some(Binding::Files(f)) if !f.is_empty());
                if !file_bearing {
                    report.push(
                        "order-connects-file-components",
                        vec![endpoint.clone()],
                        format!("order edge endpoint {endpoint} is not a file-bearing component"),
                    );
                }
            }
            match (self.subgraph_root(from), self.subgraph_root(to)) {
                (Some(a), Some(b)) if a == b => {
                    per_subgraph.entry(a).or_default().push((from, to));
                }
                (Some(a), Some(b)) => {
                    report.push(
                        "order-within-subgraph",
                        vec![from.clone(), to.clone()],
                        format!("order edge {from}->{to} crosses subgraphs {a} and {b}"),
                    );
                }
                _ => {}
            }
        }
        for (root, edges) in per_subgraph {
            let members: Vec<&NodeId> = std::iter::once(root)
                .chain(self.descendants(root).iter().map(|n| &n.id))
                .collect();
            if let Some(cycle) = find_cycle(members.iter().copied(), edges.iter().copied()) {
                report.push(
                    "order-acyclic",
                    cycle.clone(),
                    format!(
                        "order edges in subgraph {root} form a cycle through {}",
                        join_ids(&cycle)
                    ),
                );
            }
        }
    }

    fn check_bindings(&self, report: &mut ValidationReport) {
        for n in &self.nodes {
            match (&n.kind, &n.structure) {
                (_, None) => {}
                (NodeKind::SubgraphRoot, Some(Binding::Dir(_)))
                | (NodeKind::Component, Some(Binding::Files(_)))
                | (NodeKind::Leaf, Some(Binding::Interfaces(_))) => {}
                (kind, Some(binding)) => {
                    let got = match binding {
                        Binding::Dir(_) => "directory",
                        Binding::Files(_) => "files",
                        Binding::Interfaces(_) => "interfaces",
                    };
                    report.push(
                        "binding-matches-kind",
                        vec![n.id.clone()],
                        format!("{kind} node {} carries a {got} binding", n.id),
                    );
                }
            }
        }
        for root in self.roots() {
            let Some(Binding::Dir(dir)) = &root.structure else { continue };
            let prefix = format!("{}/", dir.trim_end_matches('/'));
            for desc in self.descendants(&root.id) {
                for file in desc.bound_files() {
                    if !file.starts_with(&prefix) {
                        report.push(
                            "root-dir-prefixes-files",
                            vec![root.id.clone(), desc.id.clone()],
                            format!(
                                "file {file} on node {} lies outside its root directory {dir}",
                                desc.id
                            ),
                        );
                    }
                }
            }
        }
        if self.phase == Phase::Implementation {
            for n in &self.nodes {
                if n.kind != NodeKind::Leaf {
                    continue;
                }
                let has_iface =
                    matches!(&n.structure, Some(Binding::Interfaces(r)) if !r.is_empty());
                if n.feature_paths.is_empty() || !has_iface {
                    report.push(
                        "leaves-fully-bound",
                        vec![n.id.clone()],
                        format!(
                            "leaf {} lacks {} after implementation planning",
                            n.id,
                            if n.feature_paths.is_empty() {
                                "a feature path"
                            } else {
                                "an interface reference"
                            }
                        ),
                    );
                }
            }
        }
    }

    /// Orders all leaves so that every dataflow edge `u -> v` places the
    /// leaves under `u` before the leaves under `v`, and order edges within a
    /// subgraph place the leaves of earlier components first. Independent
    /// positions are tie-broken by ascending (file path, label, id) so the
    /// result is a pure function of the graph.
    pub fn topological_order(&self) -> Result<Vec<&RpgNode>, GraphError> {
        let report = self.validate();
        if !report.is_empty() {
            return Err(GraphError::Invalid(report));
        }

        let mut ordered = Vec::new();
        for root in self.subgraph_order() {
            ordered.extend(self.subgraph_leaf_order(root));
        }
        Ok(ordered)
    }

    /// Subgraph roots in dataflow-topological order, ties by (label, id).
    fn subgraph_order(&self) -> Vec<&NodeId> {
        let roots: Vec<&RpgNode> =
            self.nodes.iter().filter(|n| n.kind == NodeKind::SubgraphRoot).collect();
        let key = |id: &NodeId| {
            let n = self.node(id).expect("validated");
            (n.label.clone(), n.id.clone())
        };
        let edges: Vec<(&NodeId, &NodeId)> = self
            .edges
            .iter()
            .filter_map(|e| match e {
                RpgEdge::Dataflow { from, to, .. } => Some((from, to)),
                _ => None,
            })
            .collect();
        kahn_order(roots.iter().map(|n| &n.id), &edges, key)
    }

    /// Leaves of one subgraph: governing components in order-edge topological
    /// order, leaves within a component sorted by (file path, label, id).
    fn subgraph_leaf_order(&self, root: &NodeId) -> Vec<&RpgNode> {
        let mut members: Vec<&RpgNode> = self.descendants(root);
        if let Some(n) = self.node(root) {
            members.push(n);
        }
        let leaves: Vec<&RpgNode> = members.iter().filter(|n| n.kind == NodeKind::Leaf).copied().collect();

        // Nearest file-bearing ancestor component governs a leaf's position.
        let governing = |leaf: &RpgNode| -> Option<NodeId> {
            let mut cur = leaf.id.clone();
            while let Some(p) = self.parent(&cur) {
                let pn = self.node(p)?;
                if pn.kind == NodeKind::Component
                    && matches!(&pn.structure, Some(Binding::Files(f)) if !f.is_empty())
                {
                    return Some(pn.id.clone());
                }
                cur = p.clone();
            }
            None
        };

        let mut groups: BTreeMap<Option<NodeId>, Vec<&RpgNode>> = BTreeMap::new();
        for leaf in leaves {
            groups.entry(governing(leaf)).or_default().push(leaf);
        }

        let group_key = |id: &Option<NodeId>| match id {
            None => (String::new(), String::new(), String::new()),
            Some(id) => {
                let n = self.node(id).expect("validated");
                let min_file =
                    n.bound_files().iter().next().map(|f| f.to_string()).unwrap_or_default();
                (min_file, n.label.clone(), n.id.0.clone())
            }
        };
        let order_edges: Vec<(Option<NodeId>, Option<NodeId>)> = self
            .edges
            .iter()
            .filter_map(|e| match e {
                RpgEdge::Order { from, to } if self.subgraph_root(from) == Some(root) => {
                    Some((Some(from.clone()), Some(to.clone())))
                }
                _ => None,
            })
            .collect();
        let group_ids: Vec<Option<NodeId>> = groups.keys().cloned().collect();
        let edge_refs: Vec<(&Option<NodeId>, &Option<NodeId>)> =
            order_edges.iter().map(|(a, b)| (a, b)).collect();
        let ordered_groups = kahn_order(group_ids.iter(), &edge_refs, group_key);

        let leaf_key = |leaf: &&RpgNode| {
            let file =
                leaf.bound_files().iter().next().map(|f| f.to_string()).unwrap_or_default();
            (file, leaf.label.clone(), leaf.id.0.clone())
        };
        let mut out = Vec::new();
        for gid in ordered_groups {
            if let Some(mut leaves) = groups.remove(gid) {
                leaves.sort_by_key(|l| leaf_key(l));
                out.extend(leaves);
            }
        }
        debug_assert!(groups.is_empty(), "every leaf group must be ordered");
        out
    }

    /// Serializes the graph to its canonical JSON document: nodes sorted by
    /// id, edges sorted by (kind, from, to, data_id), two-space indentation.
    /// Requires a valid graph; emitting a broken document is never useful.
    pub fn serialize(&self) -> Result<String, GraphError> {
        let report = self.validate();
        if !report.is_empty() {
            return Err(GraphError::Invalid(report));
        }
        let mut canon = self.clone();
        canon.nodes.sort_by(|a, b| a.id.cmp(&b.id));
        canon.edges.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(
            &mut buf,
            serde_json::ser::PrettyFormatter::with_indent(b"  "),
        );
        serde::Serialize::serialize(&canon, &mut ser).expect("graph serialization cannot fail");
        let mut text = String::from_utf8(buf).expect("serde_json emits UTF-8");
        text.push('\n');
        Ok(text)
    }

    /// Parses a graph document, rejecting malformed input with a
    /// position-bearing error naming the offending field.
    pub fn deserialize(document: &str) -> Result<Rpg, GraphError> {
        serde_json::from_str(document).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Renders the indented node tree with structural binding annotations,
    /// e.g. `Regression [-> dir: src/regression]` and
    /// `Lasso [-> file: src/regression/lasso.py]`. Bindings are listed in
    /// path-sorted order; unbound nodes carry no bracket annotation.
    pub fn render_summary(&self) -> String {
        let mut out = String::new();
        for root in self.roots() {
            self.render_node(root, 0, &mut out);
        }
        out
    }

    fn render_node(&self, node: &RpgNode, depth: usize, out: &mut String) {
        for _ in 0..depth {
            out.push_str("    ");
        }
        out.push_str(&node.label);
        match &node.structure {
            Some(Binding::Dir(d)) => {
                out.push_str(&format!(" [-> dir: {d}]"));
            }
            Some(Binding::Files(files)) if !files.is_empty() => {
                let list: Vec<String> = files.iter().map(|f| format!("file: {f}")).collect();
                out.push_str(&format!(" [-> {}]", list.join(", ")));
            }
            Some(Binding::Interfaces(refs)) if !refs.is_empty() => {
                let files: BTreeSet<&str> = refs.iter().map(|r| r.file.as_str()).collect();
                let list: Vec<String> = files.iter().map(|f| format!("file: {f}")).collect();
                out.push_str(&format!(" [-> {}]", list.join(", ")));
            }
            _ => {}
        }
        out.push('\n');
        for child in self.children(&node.id) {
            self.render_node(child, depth + 1, out);
        }
    }
}

/// Kahn's algorithm with a deterministic tie-break: among ready nodes, the
/// one with the smallest `key` is emitted first. Nodes caught in cycles are
/// appended in key order so the output is always a permutation (callers
/// validate acyclicity separately).
fn kahn_order<'a, N, K, F>(
    nodes: impl Iterator<Item = &'a N>,
    edges: &[(&'a N, &'a N)],
    key: F,
) -> Vec<&'a N>
where
    N: Ord + Eq,
    K: Ord,
    F: Fn(&N) -> K,
{
    let node_list: Vec<&N> = nodes.collect();
    let mut indegree: BTreeMap<&N, usize> = node_list.iter().map(|n| (*n, 0)).collect();
    let mut succs: BTreeMap<&N, Vec<&N>> = BTreeMap::new();
    for &(from, to) in edges {
        if indegree.contains_key(&from) && indegree.contains_key(&to) {
            *indegree.get_mut(&to).expect("present") += 1;
            succs.entry(from).or_default().push(to);
        }
    }
    let mut ready: BTreeSet<(K, &N)> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| (key(n), *n))
        .collect();
    let mut out = Vec::with_capacity(node_list.len());
    while let Some((_, n)) = ready.pop_first() {
        out.push(n);
        for succ in succs.remove(&n).unwrap_or_default() {
            let d = indegree.get_mut(&succ).expect("present");
            *d -= 1;
            if *d == 0 {
                ready.insert((key(succ), succ));
            }
        }
    }
    if out.len() < node_list.len() {
        let mut rest: Vec<&N> = node_list.into_iter().filter(|n| !out.contains(n)).collect();
        rest.sort_by(|a, b| key(a).cmp(&key(b)));
        out.extend(rest);
    }
    out
}

/// Finds one cycle among the given edges, returned as the node ids on it.
fn find_cycle<'a, N>(
    nodes: impl Iterator<Item = &'a N>,
    edges: impl Iterator<Item = (&'a N, &'a N)> + Clone,
) -> Option<Vec<NodeId>>
where
    N: Ord + Eq + fmt::Display + 'a,
{
    let node_list: Vec<&N> = nodes.collect();
    let mut succs: BTreeMap<&N, Vec<&N>> = BTreeMap::new();
    for (from, to) in edges {
        succs.entry(from).or_default().push(to);
    }
    // Iterative DFS with three-color marking.
    let mut state: BTreeMap<&N, u8> = BTreeMap::new();
    for start in node_list {
        if state.get(&start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(&N, usize)> = vec![(start, 0)];
        let mut path: Vec<&N> = Vec::new();
        state.insert(start, 1);
        path.push(start);
        while let Some((node, idx)) = stack.pop() {
            let next = succs.get(&node).and_then(|s| s.get(idx)).copied();
            match next {
                Some(succ) => {
                    stack.push((node, idx + 1));
                    match state.get(&succ).copied().unwrap_or(0) {
                        0 => {
                            state.insert(succ, 1);
                            path.push(succ);
                            stack.push((succ, 0));
                        }
                        1 => {
                            let pos = path.iter().position(|n| *n == succ).unwrap_or(0);
                            return Some(
                                path[pos..].iter().map(|n| NodeId::new(n.to_string())).collect(),
                            );
                        }
                        _ => {}
                    }
                }
                None => {
                    state.insert(node, 2);
                    if path.last() == Some(&node) {
                        path.pop();
                    }
                }
            }
        }
    }
    None
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(", ")
}
