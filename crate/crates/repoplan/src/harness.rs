//! Patch-oriented testing: unit, regression, and integration stages over a
//! workspace, with oracle-generated tests, sandboxed execution,
//! majority-vote failure attribution, and bounded test repair.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codegen::Patch;
use crate::graph::{Binding, InterfaceKind, InterfaceRef, NodeId, NodeKind, Rpg, RpgEdge};
use crate::oracle::{Oracle, OracleError, SlotBindings};
use crate::pysrc::{self, PyClass};
use crate::sandbox::{ExecutionResult, Sandbox, SandboxError, SandboxLimits};
use crate::wire;
use crate::workspace::{sha256_hex, Workspace, WorkspaceError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("{stage}: {message}")]
    Protocol { stage: String, message: String },
    #[error("invalid test node: {0}")]
    InvalidNode(String),
}

fn protocol(stage: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Protocol { stage: stage.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Unit,
    Integration,
}

/// Failure attribution categories a judge can vote for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrKind {
    Implementation,
    TestCode,
    Environment,
}

impl ErrKind {
    fn parse(text: &str) -> Option<ErrKind> {
        match text.trim() {
            "implementation" => Some(ErrKind::Implementation),
            "test_code" => Some(ErrKind::TestCode),
            "environment" => Some(ErrKind::Environment),
            _ => None,
        }
    }
}

/// One generated test with the units it exercises and its execution state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestNode {
    pub kind: TestKind,
    pub units: Vec<InterfaceRef>,
    /// Fingerprint of the tested code at generation time; regression reuse
    /// requires it to match the current code.
    pub code_digest: String,
    pub test_file: String,
    pub test_code: String,
    pub last_result: Option<ExecutionResult>,
    pub executions: u32,
    /// Set when the remediation cap ran out on test/environment failures.
    pub unresolved_environment: bool,
}

impl TestNode {
    pub fn validate(&self) -> Result<(), HarnessError> {
        match self.kind {
            TestKind::Unit => {
                if self.units.len() != 1 {
                    return Err(HarnessError::InvalidNode(format!(
                        "unit node must reference exactly one interface, has {}",
                        self.units.len()
                    )));
                }
            }
            TestKind::Integration => {
                let files: BTreeSet<&str> =
                    self.units.iter().map(|u| u.file.as_str()).collect();
                if self.units.len() < 2 || files.len() < 2 {
                    return Err(HarnessError::InvalidNode(
                        "integration node must reference at least two interfaces across two files"
                            .to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.last_result.as_ref().map(|r| r.passed()).unwrap_or(false)
    }
}

/// Task description and dependency code excerpts handed to test generation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskContext {
    pub task: String,
    pub dependency_code: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessConfig {
    /// Majority-vote rounds per failure judgment; must stay odd.
    pub judge_rounds: usize,
    /// Test/environment repair attempts before a node is marked unresolved.
    pub remediation_cap: usize,
    pub limits: SandboxLimits,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            judge_rounds: 5,
            remediation_cap: 20,
            limits: SandboxLimits::default(),
        }
    }
}

/// Aggregate of one failure judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub err_type: ErrKind,
    /// Per-round votes; `None` marks an abstention (unparsable judgment).
    pub votes: Vec<Option<ErrKind>>,
    pub reviews: Vec<String>,
}

/// Majority rule over the vote multiset: strict majority wins; anything
/// short of that (abstentions included) falls back to implementation, which
/// routes the failure to the caller's repair loop.
pub fn verdict_of_votes(votes: &[Option<ErrKind>]) -> ErrKind {
    let n = votes.len();
    for kind in [ErrKind::Implementation, ErrKind::TestCode, ErrKind::Environment] {
        let count = votes.iter().filter(|v| **v == Some(kind)).count();
        if count * 2 > n {
            return kind;
        }
    }
    ErrKind::Implementation
}

/// Issues `rounds` independent judgments of a failed execution and
/// aggregates them by strict majority.
pub fn judge_failure(
    oracle: &Oracle,
    code: &str,
    test_code: &str,
    output: &str,
    branch_plan: &str,
    rounds: usize,
) -> Result<Verdict, HarnessError> {
    if rounds % 2 == 0 {
        return Err(protocol("judge_failure", "vote count must be odd"));
    }
    let mut votes = Vec::new();
    let mut reviews = Vec::new();
    for _ in 0..rounds {
        let bindings = SlotBindings::new()
            .set("code", code)
            .set("test_code", test_code)
            .set("output", output)
            .set("branch_plan", branch_plan);
        // A garbage judgment is an abstention, not a pipeline failure;
        // infrastructure errors still propagate.
        let payload = match oracle.exchange("judge_failure", &bindings) {
            Ok(blocks) => blocks.payload.as_structured().cloned(),
            Err(OracleError::Protocol { .. }) => None,
            Err(other) => return Err(other.into()),
        };
        match payload {
            Some(value) => {
                let vote = value
                    .get("err_type")
                    .and_then(|v| v.as_str())
                    .and_then(ErrKind::parse);
                let review = value
                    .get("review")
                    .and_then(|v| v.as_str())
                    .unwrap_or("(no review)")
                    .to_string();
                votes.push(vote);
                reviews.push(review);
            }
            None => {
                votes.push(None);
                reviews.push("(unparsable judgment)".to_string());
            }
        }
    }
    Ok(Verdict { err_type: verdict_of_votes(&votes), votes, reviews })
}

/// Trace of one pipeline run, the budget-compliance evidence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestTrajectory {
    pub events: Vec<String>,
    pub executions: u32,
    pub remediation_attempts: u32,
    pub judge_rounds_used: u32,
    pub reused: bool,
}

/// Test file for a unit bound to `file`: a tests/ mirror of the source
/// layout, with the leading source directory dropped.
pub fn unit_test_file(file: &str) -> String {
    let trimmed = file.strip_prefix("src/").unwrap_or(file);
    let (dir, name) = match trimmed.rsplit_once('/') {
        Some((d, n)) => (Some(d), n),
        None => (None, trimmed),
    };
    let stem = name.strip_suffix(".py").unwrap_or(name);
    match dir {
        Some(d) => format!("tests/{d}/test_{stem}.py"),
        None => format!("tests/test_{stem}.py"),
    }
}

/// Test file for an integration cluster, named by the files it spans plus
/// a digest suffix to keep distinct clusters distinct.
pub fn integration_test_file(units: &[InterfaceRef]) -> String {
    let mut stems: Vec<&str> = Vec::new();
    for u in units {
        let stem = u
            .file
            .rsplit('/')
            .next()
            .map(|n| n.strip_suffix(".py").unwrap_or(n))
            .unwrap_or("x");
        if !stems.contains(&stem) {
            stems.push(stem);
        }
    }
    let joined: String = units
        .iter()
        .map(|u| format!("{}:{}", u.file, u.name))
        .collect::<Vec<_>>()
        .join("|");
    let digest = sha256_hex(&joined);
    format!("tests/integration/test_{}_{}.py", stems.join("_"), &digest[..8])
}

fn class_fingerprint(class: &PyClass) -> String {
    let methods: String = class
        .methods
        .iter()
        .map(|m| format!("{}\n{}", m.signature, pysrc::normalized_body(m)))
        .collect::<Vec<_>>()
        .join("\n--\n");
    format!(
        "{}({})|{}",
        class.name,
        class.bases.join(", "),
        sha256_hex(&methods)
    )
}

/// Signature-and-logic fingerprint of one interface in the current
/// workspace: normalized signature plus a digest of the comment-stripped
/// body. Missing targets fingerprint as absent, which blocks reuse.
pub fn interface_fingerprint(ws: &Workspace, unit: &InterfaceRef) -> String {
    let Ok(source) = ws.read(&unit.file) else {
        return format!("absent-file|{}", unit.file);
    };
    let module = pysrc::parse_module(&source);
    match unit.kind {
        InterfaceKind::Function => match module.find_function(&unit.name) {
            Some(f) => format!("{}|{}", f.signature, sha256_hex(&pysrc::normalized_body(f))),
            None => format!("absent|{}", unit.name),
        },
        InterfaceKind::Class => match module.find_class(&unit.name) {
            Some(c) => class_fingerprint(c),
            None => format!("absent|{}", unit.name),
        },
        InterfaceKind::Method => {
            let Some((class_name, method_name)) = unit.name.split_once('.') else {
                return format!("absent|{}", unit.name);
            };
            module
                .find_class(class_name)
                .and_then(|c| c.methods.iter().find(|m| m.name == method_name))
                .map(|m| {
                    format!("{}|{}", m.signature, sha256_hex(&pysrc::normalized_body(m)))
                })
                .unwrap_or_else(|| format!("absent|{}", unit.name))
        }
    }
}

/// Combined fingerprint of several units, order-independent.
pub fn units_fingerprint(ws: &Workspace, units: &[InterfaceRef]) -> String {
    let mut parts: Vec<String> = units
        .iter()
        .map(|u| format!("{}:{}={}", u.file, u.name, interface_fingerprint(ws, u)))
        .collect();
    parts.sort();
    sha256_hex(&parts.join("\n"))
}

/// Doc contracts of the tested units, extracted from the code under test.
fn extract_doc_contract(code: &str, units: &[InterfaceRef]) -> String {
    let module = pysrc::parse_module(code);
    let mut docs = Vec::new();
    for unit in units {
        let doc = match unit.kind {
            InterfaceKind::Function => module
                .find_function(&unit.name)
                .and_then(|f| f.docstring.clone()),
            InterfaceKind::Class => module.find_class(&unit.name).map(|c| {
                let mut parts = vec![c.docstring.clone().unwrap_or_default()];
                for m in &c.methods {
                    if let Some(d) = &m.docstring {
                        parts.push(format!("{}: {}", m.name, d));
                    }
                }
                parts.join("\n")
            }),
            InterfaceKind::Method => unit.name.split_once('.').and_then(|(c, m)| {
                module
                    .find_class(c)
                    .and_then(|cl| cl.methods.iter().find(|mm| mm.name == m))
                    .and_then(|mm| mm.docstring.clone())
            }),
        };
        if let Some(doc) = doc {
            docs.push(format!("{}: {}", unit.descriptor(), doc));
        }
    }
    if docs.is_empty() {
        "(none)".to_string()
    } else {
        docs.join("\n\n")
    }
}

fn descriptor_of(units: &[InterfaceRef]) -> String {
    units.iter().map(|u| u.descriptor()).collect::<Vec<_>>().join(", ")
}

/// End-to-end test generation, execution, judgment, and repair for one
/// unit or integration target. Implementation verdicts return immediately
/// with the failure attached; test/environment verdicts are repaired up to
/// the remediation cap, after which the node is marked unresolved.
pub fn run_testing_pipeline(
    ws: &Workspace,
    sandbox: &dyn Sandbox,
    oracle: &Oracle,
    ctx: &TaskContext,
    units: &[InterfaceRef],
    code: &str,
    prior: Option<&TestNode>,
    config: &HarnessConfig,
) -> Result<(TestNode, TestTrajectory), HarnessError> {
    if units.is_empty() {
        return Err(protocol("run_testing_pipeline", "no units to test"));
    }
    let kind = if units.len() >= 2 { TestKind::Integration } else { TestKind::Unit };
    let test_file = match prior {
        Some(p) => p.test_file.clone(),
        None => match kind {
            TestKind::Unit => unit_test_file(&units[0].file),
            TestKind::Integration => integration_test_file(units),
        },
    };
    let descriptor = descriptor_of(units);
    let mut traj = TestTrajectory::default();

    let prior_test = prior.map(|p| p.test_code.as_str()).unwrap_or("(none)");
    let doc_contract = extract_doc_contract(code, units);
    let branch_blocks = oracle.exchange(
        "test_branch",
        &SlotBindings::new()
            .set("unit_descriptor", descriptor.as_str())
            .set("code", code)
            .set("doc_contract", doc_contract.as_str())
            .set("prior_test", prior_test),
    )?;
    let mut branches: Vec<String> = branch_blocks
        .payload
        .as_structured()
        .and_then(|v| v.get("branches"))
        .and_then(|v| v.as_array())
        .map(|a| {
            a.iter()
                .filter_map(|b| b.as_str().map(|s| s.to_string()))
                .collect()
        })
        .ok_or_else(|| protocol("test_branch", "expected {\"branches\": [...]}"))?;
    branches.truncate(config.remediation_cap.max(1));
    let branch_plan = branches.join(", ");
    traj.events.push(format!("branches: {branch_plan}"));

    let generate_blocks = oracle.exchange(
        "test_generate",
        &SlotBindings::new()
            .set("unit_descriptor", descriptor.as_str())
            .set("branch_plan", branch_plan.as_str())
            .set("code", code)
            .set("task", ctx.task.as_str())
            .set("test_file", test_file.as_str()),
    )?;
    let generated = generate_blocks
        .payload
        .as_text()
        .map(|t| wire::extract_fence(t).unwrap_or_else(|| t.trim().to_string()))
        .ok_or_else(|| protocol("test_generate", "expected a text payload"))?;

    let mut node = TestNode {
        kind,
        units: units.to_vec(),
        code_digest: units_fingerprint(ws, units),
        test_file: test_file.clone(),
        test_code: generated,
        last_result: None,
        executions: 0,
        unresolved_environment: false,
    };
    node.validate()?;

    ws.write(&node.test_file, &node.test_code)?;
    let mut result = sandbox.run_python(ws.root(), &node.test_file, &config.limits)?;
    node.executions += 1;
    traj.executions += 1;
    traj.events.push(format!(
        "execution 1: {}",
        if result.passed() { "pass" } else { "fail" }
    ));

    while !result.passed() {
        let output = result.output();
        let verdict = judge_failure(
            oracle,
            code,
            &node.test_code,
            &output,
            &branch_plan,
            config.judge_rounds,
        )?;
        traj.judge_rounds_used += verdict.votes.len() as u32;
        traj.events.push(format!("verdict: {:?}", verdict.err_type));
        if verdict.err_type == ErrKind::Implementation {
            node.last_result = Some(result);
            return Ok((node, traj));
        }
        if traj.remediation_attempts as usize >= config.remediation_cap {
            node.unresolved_environment = true;
            node.last_result = Some(result);
            traj.events.push("remediation cap exhausted".to_string());
            return Ok((node, traj));
        }
        traj.remediation_attempts += 1;
        let query_blocks = oracle.exchange(
            "fix_query",
            &SlotBindings::new()
                .set("code", code)
                .set("test_code", node.test_code.as_str())
                .set("output", output.as_str())
                .set("reviews", verdict.reviews.join("\n")),
        )?;
        let query = query_blocks
            .payload
            .as_structured()
            .and_then(|v| v.get("query"))
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| protocol("fix_query", "expected {\"query\": ...}"))?;
        let fix_blocks = oracle.exchange(
            "test_fix",
            &SlotBindings::new()
                .set("query", query.as_str())
                .set("test_code", node.test_code.as_str())
                .set("output", output.as_str()),
        )?;
        let fixed = fix_blocks
            .payload
            .as_text()
            .map(|t| wire::extract_fence(t).unwrap_or_else(|| t.trim().to_string()))
            .ok_or_else(|| protocol("test_fix", "expected a text payload"))?;
        node.test_code = fixed;
        ws.write(&node.test_file, &node.test_code)?;
        result = sandbox.run_python(ws.root(), &node.test_file, &config.limits)?;
        node.executions += 1;
        traj.executions += 1;
        traj.events.push(format!(
            "execution {}: {}",
            node.executions,
            if result.passed() { "pass" } else { "fail" }
        ));
    }

    node.last_result = Some(result);
    Ok((node, traj))
}

/// Registry of generated test nodes, keyed by unit target and integration
/// cluster.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NodeStore {
    pub units: BTreeMap<String, TestNode>,
    pub integrations: BTreeMap<String, TestNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchTestOutcome {
    pub key: String,
    pub kind: TestKind,
    pub reused: bool,
    pub result: ExecutionResult,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TestPatchesReport {
    pub unit_outcomes: Vec<PatchTestOutcome>,
    pub integration_outcomes: Vec<PatchTestOutcome>,
    pub trajectories: BTreeMap<String, TestTrajectory>,
}

impl TestPatchesReport {
    pub fn all_passed(&self) -> bool {
        self.unit_outcomes
            .iter()
            .chain(self.integration_outcomes.iter())
            .all(|o| o.result.passed())
    }

    pub fn failed_keys(&self) -> Vec<&str> {
        self.unit_outcomes
            .iter()
            .chain(self.integration_outcomes.iter())
            .filter(|o| !o.result.passed())
            .map(|o| o.key.as_str())
            .collect()
    }
}

/// Dotted module paths bound by one import line.
fn imported_modules(line: &str) -> Vec<String> {
    let trimmed = line.trim();
    if let Some(rest) = trimmed.strip_prefix("from ") {
        let module = rest.split_whitespace().next().unwrap_or("");
        if module.starts_with('.') || module.is_empty() {
            return Vec::new();
        }
        return vec![module.to_string()];
    }
    if let Some(rest) = trimmed.strip_prefix("import ") {
        return rest
            .split(',')
            .map(|part| {
                part.trim()
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .to_string()
            })
            .filter(|m| !m.is_empty())
            .collect();
    }
    Vec::new()
}

/// First leaf whose interface bindings point into `file`.
fn leaf_for_file<'a>(rpg: &'a Rpg, file: &str) -> Option<&'a NodeId> {
    rpg.nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Leaf)
        .find(|n| match &n.structure {
            Some(Binding::Interfaces(refs)) => refs.iter().any(|r| r.file == file),
            _ => false,
        })
        .map(|n| &n.id)
}

/// The leaf's first interface bound to `file` (falls back to its first
/// interface anywhere).
fn primary_interface(rpg: &Rpg, leaf: &NodeId, file: &str) -> Option<InterfaceRef> {
    let node = rpg.node(leaf)?;
    let Some(Binding::Interfaces(refs)) = &node.structure else { return None };
    refs.iter()
        .find(|r| r.file == file)
        .or_else(|| refs.iter().next())
        .cloned()
}

fn subgraph_root_of(rpg: &Rpg, leaf: &NodeId) -> Option<NodeId> {
    let mut current = leaf.clone();
    loop {
        match rpg.parent(&current) {
            Some(parent) => current = parent.clone(),
            None => {
                let node = rpg.node(&current)?;
                return (node.kind == NodeKind::SubgraphRoot).then_some(current);
            }
        }
    }
}

/// Extends the patched-file set with dependency files: workspace files the
/// patches import, plus already-tested files one dataflow hop upstream.
fn find_dependency_targets(
    ws: &Workspace,
    rpg: &Rpg,
    seeds: &[(String, NodeId)],
    store: &NodeStore,
) -> Vec<(String, NodeId)> {
    let seed_files: BTreeSet<&str> = seeds.iter().map(|(f, _)| f.as_str()).collect();
    let mut found: BTreeMap<String, NodeId> = BTreeMap::new();

    for (file, _) in seeds {
        let Ok(source) = ws.read(file) else { continue };
        let module = pysrc::parse_module(&source);
        for import in module.imports() {
            for dotted in imported_modules(import) {
                let candidate = format!("{}.py", dotted.replace('.', "/"));
                if seed_files.contains(candidate.as_str()) || !ws.exists(&candidate) {
                    continue;
                }
                if let Some(leaf) = leaf_for_file(rpg, &candidate) {
                    found.entry(candidate.clone()).or_insert_with(|| leaf.clone());
                }
            }
        }
    }

    let seed_roots: BTreeSet<NodeId> = seeds
        .iter()
        .filter_map(|(_, leaf)| subgraph_root_of(rpg, leaf))
        .collect();
    for edge in &rpg.edges {
        let RpgEdge::Dataflow { from, to, .. } = edge else { continue };
        if !seed_roots.contains(to) {
            continue;
        }
        for leaf in rpg.descendants(from) {
            if leaf.kind != NodeKind::Leaf {
                continue;
            }
            let Some(Binding::Interfaces(refs)) = &leaf.structure else { continue };
            for r in refs {
                if seed_files.contains(r.file.as_str()) {
                    continue;
                }
                let tested = store
                    .units
                    .keys()
                    .any(|k| k.starts_with(&format!("{}:", r.file)));
                if tested {
                    found.entry(r.file.clone()).or_insert_with(|| leaf.id.clone());
                }
            }
        }
    }

    found.into_iter().collect()
}

/// Integration cluster: one dataflow edge and the interfaces of the leaves
/// under its two endpoint roots.
fn integration_clusters(
    rpg: &Rpg,
    touched_roots: &BTreeSet<NodeId>,
) -> Vec<(String, Vec<InterfaceRef>)> {
    let mut clusters = Vec::new();
    for edge in &rpg.edges {
        let RpgEdge::Dataflow { from, to, data_id, .. } = edge else { continue };
        if !touched_roots.contains(from) && !touched_roots.contains(to) {
            continue;
        }
        let mut units: BTreeSet<InterfaceRef> = BTreeSet::new();
        for root in [from, to] {
            for node in rpg.descendants(root) {
                if node.kind != NodeKind::Leaf {
                    continue;
                }
                if let Some(Binding::Interfaces(refs)) = &node.structure {
                    units.extend(refs.iter().cloned());
                }
            }
        }
        let units: Vec<InterfaceRef> = units.into_iter().collect();
        let files: BTreeSet<&str> = units.iter().map(|u| u.file.as_str()).collect();
        if units.len() < 2 || files.len() < 2 {
            continue;
        }
        clusters.push((format!("{from}->{to}:{data_id}"), units));
    }
    clusters.sort_by(|a, b| a.0.cmp(&b.0));
    clusters
}

fn integration_code(ws: &Workspace, units: &[InterfaceRef]) -> String {
    let files: BTreeSet<&str> = units.iter().map(|u| u.file.as_str()).collect();
    files
        .iter()
        .filter_map(|f| ws.read(f).ok().map(|src| format!("# {f}\n{src}")))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Unit, regression, and integration testing of one patch batch: extends
/// the patches with dependency targets, reuses nodes whose tested code is
/// unchanged, regenerates the rest, then clusters by dataflow edge and
/// does the same at the integration level.
pub fn test_patches(
    ws: &Workspace,
    sandbox: &dyn Sandbox,
    oracle: &Oracle,
    ctx: &TaskContext,
    rpg: &Rpg,
    patches: &[Patch],
    store: &mut NodeStore,
    config: &HarnessConfig,
) -> Result<TestPatchesReport, HarnessError> {
    let mut report = TestPatchesReport::default();

    let mut targets: Vec<(String, NodeId)> = Vec::new();
    for patch in patches {
        let pair = (patch.file.clone(), patch.leaf.clone());
        if !targets.contains(&pair) {
            targets.push(pair);
        }
    }
    for extra in find_dependency_targets(ws, rpg, &targets, store) {
        if !targets.iter().any(|(f, _)| *f == extra.0) {
            targets.push(extra);
        }
    }

    for (file, leaf) in &targets {
        let Some(unit) = primary_interface(rpg, leaf, file) else {
            continue;
        };
        let key = format!("{}:{}", unit.file, unit.name);
        let current = units_fingerprint(ws, std::slice::from_ref(&unit));
        let reusable = store
            .units
            .get(&key)
            .map(|n| n.code_digest == current)
            .unwrap_or(false);
        if reusable {
            let node = store.units.get_mut(&key).expect("checked above");
            ws.write(&node.test_file, &node.test_code)?;
            let result = sandbox.run_python(ws.root(), &node.test_file, &config.limits)?;
            node.executions += 1;
            node.last_result = Some(result.clone());
            report.unit_outcomes.push(PatchTestOutcome {
                key: key.clone(),
                kind: TestKind::Unit,
                reused: true,
                result,
            });
            report
                .trajectories
                .entry(key)
                .or_default()
                .events
                .push("regression reuse".to_string());
        } else {
            let code = ws.read(&unit.file)?;
            let prior = store.units.get(&key).cloned();
            let (node, mut traj) = run_testing_pipeline(
                ws,
                sandbox,
                oracle,
                ctx,
                std::slice::from_ref(&unit),
                &code,
                prior.as_ref(),
                config,
            )?;
            traj.reused = false;
            let result = node
                .last_result
                .clone()
                .unwrap_or_default();
            report.unit_outcomes.push(PatchTestOutcome {
                key: key.clone(),
                kind: TestKind::Unit,
                reused: false,
                result,
            });
            report.trajectories.insert(key.clone(), traj);
            store.units.insert(key, node);
        }
    }

    let touched_roots: BTreeSet<NodeId> = targets
        .iter()
        .filter_map(|(_, leaf)| subgraph_root_of(rpg, leaf))
        .collect();
    for (key, units) in integration_clusters(rpg, &touched_roots) {
        let current = units_fingerprint(ws, &units);
        let reusable = store
            .integrations
            .get(&key)
            .map(|n| n.code_digest == current)
            .unwrap_or(false);
        if reusable {
            let node = store.integrations.get_mut(&key).expect("checked above");
            let result = sandbox.run_python(ws.root(), &node.test_file, &config.limits)?;
            node.executions += 1;
            node.last_result = Some(result.clone());
            report.integration_outcomes.push(PatchTestOutcome {
                key: key.clone(),
                kind: TestKind::Integration,
                reused: true,
                result,
            });
            report
                .trajectories
                .entry(key)
                .or_default()
                .events
                .push("integration regression reuse".to_string());
        } else {
            let code = integration_code(ws, &units);
            let prior = store.integrations.get(&key).cloned();
            let (node, traj) = run_testing_pipeline(
                ws,
                sandbox,
                oracle,
                ctx,
                &units,
                &code,
                prior.as_ref(),
                config,
            )?;
            let result = node.last_result.clone().unwrap_or_default();
            report.integration_outcomes.push(PatchTestOutcome {
                key: key.clone(),
                kind: TestKind::Integration,
                reused: false,
                result,
            });
            report.trajectories.insert(key.clone(), traj);
            store.integrations.insert(key, node);
        }
    }

    Ok(report)
}
