//! Structured code edits and the per-leaf implementation loop.
//!
//! Edits arrive as tool calls targeting one structural element (a class, a
//! method, a function, or the import section) and are applied by splicing
//! the parsed module, so sibling elements keep their exact bytes. Every
//! applied edit yields a [`Patch`] whose diff replays before-digest to
//! after-digest, and edits buffer in a workspace shadow until the leaf's
//! tests pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{Binding, NodeId, Rpg, RpgEdge, RpgNode};
use crate::harness::{self, HarnessConfig, HarnessError, NodeStore, TaskContext, TestKind, TestPatchesReport};
use crate::localization;
use crate::oracle::{Oracle, OracleError, SlotBindings};
use crate::pysrc::{self, PyItem};
use crate::sandbox::Sandbox;
use crate::textdiff;
use crate::trajectory::{TrajectoryError, TrajectoryEvent, TrajectoryLog};
use crate::wire::{self, ToolCall};
use crate::workspace::{sha256_hex, Shadow, Workspace, WorkspaceError};

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error("unknown edit tool {0}")]
    UnknownTool(String),
    #[error("edit tool {tool} expects {expected} string arguments")]
    BadArguments { tool: String, expected: usize },
    #[error("edit tool {0} requires a code block")]
    MissingCode(String),
    #[error("{file}: {kind} {name} not found")]
    MissingTarget { file: String, kind: String, name: String },
    #[error("edit contract: {0}")]
    Contract(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

/// One structural edit, parsed from an edit-session tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EditCommand {
    WholeClass { file: String, class_name: String, body: String },
    MethodOfClass { file: String, class_name: String, method_name: String, body: String },
    Function { file: String, function_name: String, body: String },
    ImportsAndAssignments { file: String, body: String },
    Terminate,
}

impl EditCommand {
    /// Maps a tool call plus its attached code block onto a command,
    /// validating arity and body invariants that do not need file state.
    pub fn from_tool_call(call: &ToolCall, code: Option<String>) -> Result<EditCommand, EditError> {
        let body = |tool: &str| code.clone().ok_or_else(|| EditError::MissingCode(tool.into()));
        let arg = |i: usize, expected: usize| {
            call.str_arg(i)
                .map(|s| s.to_string())
                .ok_or_else(|| EditError::BadArguments { tool: call.name.clone(), expected })
        };
        let cmd = match call.name.as_str() {
            "edit_whole_class_in_file" => EditCommand::WholeClass {
                file: arg(0, 2)?,
                class_name: arg(1, 2)?,
                body: body("edit_whole_class_in_file")?,
            },
            "edit_method_of_class_in_file" => EditCommand::MethodOfClass {
                file: arg(0, 3)?,
                class_name: arg(1, 3)?,
                method_name: arg(2, 3)?,
                body: body("edit_method_of_class_in_file")?,
            },
            "edit_function_in_file" => EditCommand::Function {
                file: arg(0, 2)?,
                function_name: arg(1, 2)?,
                body: body("edit_function_in_file")?,
            },
            "edit_imports_and_assignments_in_file" => EditCommand::ImportsAndAssignments {
                file: arg(0, 1)?,
                body: body("edit_imports_and_assignments_in_file")?,
            },
            "Terminate" => EditCommand::Terminate,
            other => return Err(EditError::UnknownTool(other.to_string())),
        };
        cmd.check_body_contract()?;
        Ok(cmd)
    }

    /// Body invariants checkable without the target file.
    pub fn check_body_contract(&self) -> Result<(), EditError> {
        match self {
            EditCommand::MethodOfClass { class_name, method_name, body, .. } => {
                let module = pysrc::parse_module(body);
                let classes: Vec<_> = module.classes().collect();
                let substantive = module.items.iter().any(|i| match i {
                    PyItem::Class(_) => false,
                    PyItem::Other { text, .. } => {
                        text.lines().any(|l| {
                            let s = l.trim();
                            !s.is_empty() && !s.starts_with('#')
                        })
                    }
                    _ => true,
                });
                if classes.len() != 1 || substantive {
                    return Err(EditError::Contract(format!(
                        "method edit body must be exactly one `class {class_name}:` block"
                    )));
                }
                let class = classes[0];
                if class.name != *class_name {
                    return Err(EditError::Contract(format!(
                        "method edit body names class {}, expected {class_name}",
                        class.name
                    )));
                }
                let method_names: Vec<&str> =
                    class.methods.iter().map(|m| m.name.as_str()).collect();
                if method_names != vec![method_name.as_str()] {
                    return Err(EditError::Contract(format!(
                        "method edit body must contain only {class_name}.{method_name}, found [{}]",
                        method_names.join(", ")
                    )));
                }
            }
            EditCommand::ImportsAndAssignments { body, .. } => {
                let module = pysrc::parse_module(body);
                for item in &module.items {
                    match item {
                        PyItem::Import { .. } | PyItem::Assignment { .. } => {}
                        PyItem::Other { text, .. } => {
                            if text.lines().any(|l| {
                                let s = l.trim();
                                !s.is_empty() && !s.starts_with('#')
                            }) {
                                return Err(EditError::Contract(
                                    "imports edit body must contain only imports and top-level assignments".into(),
                                ));
                            }
                        }
                        PyItem::Function(f) => {
                            return Err(EditError::Contract(format!(
                                "imports edit body may not define functions (found {})",
                                f.name
                            )))
                        }
                        PyItem::Class(c) => {
                            return Err(EditError::Contract(format!(
                                "imports edit body may not define classes (found {})",
                                c.name
                            )))
                        }
                    }
                }
                let groups: Vec<u8> =
                    module.imports().map(|l| import_group(l, &["src"])).collect();
                if groups.windows(2).any(|w| w[0] > w[1]) {
                    return Err(EditError::Contract(
                        "imports must be ordered standard library, third-party, local".into(),
                    ));
                }
            }
            EditCommand::WholeClass { class_name, body, .. } => {
                let module = pysrc::parse_module(body);
                if module.find_class(class_name).is_none() {
                    return Err(EditError::Contract(format!(
                        "class edit body must define class {class_name}"
                    )));
                }
            }
            EditCommand::Function { function_name, body, .. } => {
                let module = pysrc::parse_module(body);
                if module.find_function(function_name).is_none() {
                    return Err(EditError::Contract(format!(
                        "function edit body must define {function_name}"
                    )));
                }
            }
            EditCommand::Terminate => {}
        }
        Ok(())
    }

    pub fn file(&self) -> Option<&str> {
        match self {
            EditCommand::WholeClass { file, .. }
            | EditCommand::MethodOfClass { file, .. }
            | EditCommand::Function { file, .. }
            | EditCommand::ImportsAndAssignments { file, .. } => Some(file),
            EditCommand::Terminate => None,
        }
    }
}

/// Import group: 0 standard library, 1 third-party, 2 local.
fn import_group(line: &str, local_roots: &[&str]) -> u8 {
    let trimmed = line.trim();
    let module = if let Some(rest) = trimmed.strip_prefix("from ") {
        rest.split_whitespace().next().unwrap_or("")
    } else if let Some(rest) = trimmed.strip_prefix("import ") {
        rest.split(|c: char| c == ' ' || c == ',' || c == '.').next().unwrap_or("")
    } else {
        return 2;
    };
    if module.starts_with('.') {
        return 2;
    }
    let root = module.split('.').next().unwrap_or("");
    if local_roots.contains(&root) {
        return 2;
    }
    if PY_STDLIB.contains(&root) {
        return 0;
    }
    1
}

const PY_STDLIB: &[&str] = &[
    "abc", "argparse", "array", "ast", "asyncio", "base64", "bisect", "builtins", "calendar",
    "collections", "configparser", "contextlib", "copy", "csv", "dataclasses", "datetime",
    "decimal", "difflib", "enum", "errno", "fractions", "functools", "glob", "hashlib", "heapq",
    "html", "http", "importlib", "inspect", "io", "itertools", "json", "logging", "math",
    "numbers", "operator", "os", "pathlib", "pickle", "queue", "random", "re", "shutil",
    "socket", "sqlite3", "statistics", "string", "struct", "subprocess", "sys", "tempfile",
    "textwrap", "threading", "time", "traceback", "types", "typing", "unittest", "urllib",
    "uuid", "warnings", "weakref", "zlib",
];

/// A committed-unit of change: enough to audit and to replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub file: String,
    pub before_digest: String,
    pub after_digest: String,
    pub diff: String,
    pub leaf: NodeId,
    pub notes: Vec<String>,
}

/// Applies one edit to the shadow, returning the patch. Splices are
/// structural: untouched sibling items keep their exact bytes.
pub fn apply_edit(shadow: &mut Shadow, cmd: &EditCommand, leaf: &NodeId) -> Result<Patch, EditError> {
    cmd.check_body_contract()?;
    let file = cmd
        .file()
        .ok_or_else(|| EditError::Contract("terminate is not an applicable edit".into()))?
        .to_string();
    let old = if shadow.exists(&file) { shadow.read(&file)? } else { String::new() };
    let mut notes = Vec::new();
    let new = match cmd {
        EditCommand::WholeClass { class_name, body, .. } => {
            replace_or_append_item(&old, body, ItemKey::Class(class_name))
        }
        EditCommand::Function { function_name, body, .. } => {
            replace_or_append_item(&old, body, ItemKey::Function(function_name))
        }
        EditCommand::MethodOfClass { class_name, method_name, body, .. } => {
            splice_method(&old, class_name, method_name, body, &file)?
        }
        EditCommand::ImportsAndAssignments { body, .. } => {
            merge_imports_and_assignments(&old, body, shadow, &mut notes)
        }
        EditCommand::Terminate => unreachable!("file() returned None"),
    };
    let patch = Patch {
        before_digest: sha256_hex(&old),
        after_digest: sha256_hex(&new),
        diff: textdiff::unified_diff(&old, &new, &file),
        file: file.clone(),
        leaf: leaf.clone(),
        notes,
    };
    shadow.write(&file, &new)?;
    Ok(patch)
}

enum ItemKey<'a> {
    Class(&'a str),
    Function(&'a str),
}

fn normalize_block(body: &str) -> String {
    let mut b = body.trim_end().to_string();
    b.push('\n');
    b
}

fn replace_or_append_item(old: &str, body: &str, key: ItemKey) -> String {
    let module = pysrc::parse_module(old);
    let body = normalize_block(body);
    let matches_key = |item: &PyItem| match (&key, item) {
        (ItemKey::Class(name), PyItem::Class(c)) => c.name == *name,
        (ItemKey::Function(name), PyItem::Function(f)) => f.name == *name,
        _ => false,
    };
    if module.items.iter().any(|i| matches_key(i)) {
        return module
            .items
            .iter()
            .map(|item| if matches_key(item) { body.as_str() } else { item.text() })
            .collect();
    }
    append_block(old, &body)
}

fn append_block(old: &str, body: &str) -> String {
    if old.trim().is_empty() {
        return body.to_string();
    }
    format!("{}\n\n\n{}", old.trim_end(), body)
}

fn splice_method(
    old: &str,
    class_name: &str,
    method_name: &str,
    body: &str,
    file: &str,
) -> Result<String, EditError> {
    let module = pysrc::parse_module(old);
    let target = module.find_class(class_name).ok_or_else(|| EditError::MissingTarget {
        file: file.to_string(),
        kind: "class".into(),
        name: class_name.to_string(),
    })?;

    let donor_module = pysrc::parse_module(body);
    let donor_class = donor_module.classes().next().expect("contract checked");
    let donor_method = donor_class.methods.first().expect("contract checked");

    let target_lines: Vec<&str> = target.text.split_inclusive('\n').collect();
    let target_indent = target
        .methods
        .first()
        .map(|m| indent_of_line(&target.text, m.start_line - target.start_line))
        .unwrap_or_else(|| "    ".to_string());
    let reindented = reindent(&donor_method.text, &target_indent);

    let new_class_text = if let Some(existing) =
        target.methods.iter().find(|m| m.name == *method_name)
    {
        let rel_start = existing.start_line - target.start_line;
        let rel_end = existing.end_line - target.start_line + 1;
        let mut parts = String::new();
        parts.push_str(&target_lines[..rel_start].concat());
        parts.push_str(&reindented);
        parts.push_str(&target_lines[rel_end.min(target_lines.len())..].concat());
        parts
    } else {
        let mut parts = target.text.trim_end().to_string();
        parts.push_str("\n\n");
        parts.push_str(&reindented);
        parts
    };
    let new_class_text = normalize_block(&new_class_text);

    Ok(module
        .items
        .iter()
        .map(|item| match item {
            PyItem::Class(c) if c.name == class_name => new_class_text.as_str(),
            other => other.text(),
        })
        .collect())
}

fn indent_of_line(text: &str, line_index: usize) -> String {
    let line = text.split_inclusive('\n').nth(line_index).unwrap_or("");
    line.chars().take_while(|c| *c == ' ' || *c == '\t').collect()
}

/// Re-indents a method block to `indent`, preserving relative depth.
fn reindent(method_text: &str, indent: &str) -> String {
    let own_indent: String = method_text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| l.chars().take_while(|c| *c == ' ' || *c == '\t').collect())
        .unwrap_or_default();
    let mut out = String::new();
    for line in method_text.split_inclusive('\n') {
        let content = line.trim_end_matches('\n');
        if content.trim().is_empty() {
            out.push_str(content.trim_start());
        } else if let Some(rest) = content.strip_prefix(own_indent.as_str()) {
            out.push_str(indent);
            out.push_str(rest);
        } else {
            out.push_str(indent);
            out.push_str(content.trim_start());
        }
        if line.ends_with('\n') {
            out.push('\n');
        }
    }
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

/// Merges an imports-and-assignments body into the file. Existing imports
/// are never dropped unless a body import rebinds the same names and the
/// existing module path does not resolve in the workspace (a corrected
/// form). Assignments replace same-name predecessors in place; new ones
/// land after the import block.
fn merge_imports_and_assignments(
    old: &str,
    body: &str,
    shadow: &Shadow,
    notes: &mut Vec<String>,
) -> String {
    let module = pysrc::parse_module(old);
    let body_module = pysrc::parse_module(body);

    let existing_imports: Vec<String> =
        module.imports().map(|t| t.trim_end().to_string()).collect();
    let body_imports: Vec<String> =
        body_module.imports().map(|t| t.trim_end().to_string()).collect();

    let body_bound: BTreeSet<String> =
        body_imports.iter().flat_map(|l| bound_names(l)).collect();

    let mut merged: Vec<String> = Vec::new();
    for line in &existing_imports {
        if body_imports.contains(line) {
            continue;
        }
        let broken = !import_resolves(line, shadow);
        let superseded = bound_names(line).iter().all(|n| body_bound.contains(n))
            && !bound_names(line).is_empty();
        if broken && superseded {
            notes.push(format!("dropped unresolvable import `{line}` superseded by corrected form"));
            continue;
        }
        merged.push(line.clone());
    }
    for line in &body_imports {
        if !merged.contains(line) {
            merged.push(line.clone());
        }
    }
    merged.sort_by_key(|l| import_group(l, &["src"]));

    let mut import_block = String::new();
    let mut last_group = None;
    for line in &merged {
        let group = import_group(line, &["src"]);
        if let Some(prev) = last_group {
            if prev != group {
                import_block.push('\n');
            }
        }
        import_block.push_str(line);
        import_block.push('\n');
        last_group = Some(group);
    }

    let body_assignments: Vec<(String, String)> = body_module
        .items
        .iter()
        .filter_map(|i| match i {
            PyItem::Assignment { name, text, .. } => {
                Some((name.clone(), text.trim_end().to_string()))
            }
            _ => None,
        })
        .collect();
    let replaced: BTreeSet<&str> = module
        .items
        .iter()
        .filter_map(|i| match i {
            PyItem::Assignment { name, .. } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    let new_assignments: Vec<&(String, String)> = body_assignments
        .iter()
        .filter(|(name, _)| !replaced.contains(name.as_str()))
        .collect();

    let mut out = String::new();
    let mut imports_emitted = false;
    for item in &module.items {
        match item {
            PyItem::Import { .. } => {
                if !imports_emitted {
                    out.push_str(&import_block);
                    for (_, text) in &new_assignments {
                        out.push_str(text);
                        out.push('\n');
                    }
                    imports_emitted = true;
                }
            }
            PyItem::Assignment { name, text, .. } => {
                match body_assignments.iter().find(|(n, _)| n == name) {
                    Some((_, replacement)) => {
                        out.push_str(replacement);
                        out.push('\n');
                    }
                    None => out.push_str(text),
                }
            }
            other => out.push_str(other.text()),
        }
    }
    if !imports_emitted {
        let mut fresh = import_block;
        for (_, text) in &new_assignments {
            fresh.push_str(text);
            fresh.push('\n');
        }
        if out.trim().is_empty() {
            out = fresh;
        } else {
            out = format!("{fresh}\n{out}");
        }
    }
    out
}

/// Names an import statement binds in the module namespace.
fn bound_names(line: &str) -> Vec<String> {
    let trimmed = line.trim();
    if let Some(rest) = trimmed.strip_prefix("from ") {
        let Some((_, names)) = rest.split_once(" import ") else {
            return Vec::new();
        };
        names
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split(',')
            .filter_map(|n| {
                let n = n.trim();
                if n.is_empty() {
                    return None;
                }
                Some(match n.split_once(" as ") {
                    Some((_, alias)) => alias.trim().to_string(),
                    None => n.to_string(),
                })
            })
            .collect()
    } else if let Some(rest) = trimmed.strip_prefix("import ") {
        rest.split(',')
            .filter_map(|n| {
                let n = n.trim();
                if n.is_empty() {
                    return None;
                }
                Some(match n.split_once(" as ") {
                    Some((_, alias)) => alias.trim().to_string(),
                    None => n.split('.').next().unwrap_or(n).to_string(),
                })
            })
            .collect()
    } else {
        Vec::new()
    }
}

/// Whether an import's module path resolves: local modules must exist in
/// the workspace; standard-library and third-party modules are assumed
/// present.
fn import_resolves(line: &str, shadow: &Shadow) -> bool {
    if import_group(line, &["src"]) != 2 {
        return true;
    }
    let trimmed = line.trim();
    let module = if let Some(rest) = trimmed.strip_prefix("from ") {
        rest.split_whitespace().next().unwrap_or("")
    } else if let Some(rest) = trimmed.strip_prefix("import ") {
        rest.split(|c: char| c == ' ' || c == ',').next().unwrap_or("")
    } else {
        return true;
    };
    if module.starts_with('.') {
        return true;
    }
    let path = module.replace('.', "/");
    shadow.exists(&format!("{path}.py")) || shadow.exists(&format!("{path}/__init__.py"))
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("edit session: {0}")]
    Edit(#[from] EditError),
    #[error("build: {0}")]
    Invalid(String),
}

/// Per-leaf and per-iteration budgets for the implementation loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildBudget {
    /// Debug iterations per leaf.
    pub debug_iterations: u32,
    /// Localization steps per iteration.
    pub localization_attempts: usize,
    /// Edit commands per iteration.
    pub edit_steps: usize,
}

impl Default for BuildBudget {
    fn default() -> Self {
        BuildBudget { debug_iterations: 8, localization_attempts: 20, edit_steps: 20 }
    }
}

impl BuildBudget {
    pub fn validate(&self) -> Result<(), BuildError> {
        if self.debug_iterations == 0 || self.localization_attempts == 0 || self.edit_steps == 0 {
            return Err(BuildError::Invalid("all budget fields must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafStatus {
    Committed,
    Failed,
}

/// Outcome of one leaf's implementation loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafReport {
    pub leaf: NodeId,
    pub status: LeafStatus,
    pub iterations: u32,
    /// Patches that survived a passing iteration; empty for failed leaves.
    pub patches: Vec<Patch>,
    /// Failed upstream leaves whose stub interfaces this leaf was built
    /// against.
    pub built_on_stub: Vec<NodeId>,
    /// Rendered report of the last failing iteration, if any.
    pub failure: Option<String>,
}

/// Per-leaf outcomes for a whole traversal, in build order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub leaves: Vec<LeafReport>,
}

impl BuildReport {
    pub fn committed(&self) -> usize {
        self.leaves.iter().filter(|l| l.status == LeafStatus::Committed).count()
    }

    pub fn failed(&self) -> usize {
        self.leaves.iter().filter(|l| l.status == LeafStatus::Failed).count()
    }

    pub fn leaf(&self, id: &NodeId) -> Option<&LeafReport> {
        self.leaves.iter().find(|l| l.leaf == *id)
    }
}

fn leaf_task(leaf: &RpgNode) -> String {
    let mut out = format!("Implement the capability \"{}\"", leaf.label);
    if !leaf.feature_paths.is_empty() {
        let features: Vec<String> = leaf.feature_paths.iter().map(|p| p.to_string()).collect();
        out.push_str(&format!(" covering {}", features.join(", ")));
    }
    out.push('.');
    if let Some(Binding::Interfaces(refs)) = &leaf.structure {
        out.push_str("\nFill in these interfaces so their documented contracts hold:");
        for r in refs {
            out.push_str(&format!("\n- {} in {}", r.descriptor(), r.file));
        }
    }
    out
}

fn primary_file(leaf: &RpgNode) -> Result<String, BuildError> {
    match &leaf.structure {
        Some(Binding::Interfaces(refs)) if !refs.is_empty() => {
            Ok(refs.iter().next().expect("nonempty").file.clone())
        }
        _ => Err(BuildError::Invalid(format!(
            "leaf {} has no interface binding to implement",
            leaf.id
        ))),
    }
}

fn tool_name(snippet: &str) -> String {
    snippet.split('(').next().unwrap_or(snippet).trim().to_string()
}

/// "function: name" / "class: Name" / "method: Class.name" -> the name part.
fn descriptor_name(descriptor: &str) -> &str {
    descriptor.split_once(": ").map(|(_, name)| name).unwrap_or(descriptor).trim()
}

fn render_failure(report: &TestPatchesReport) -> String {
    let mut out = String::new();
    for o in report.unit_outcomes.iter().chain(report.integration_outcomes.iter()) {
        if o.result.passed() {
            continue;
        }
        let kind = match o.kind {
            TestKind::Unit => "unit",
            TestKind::Integration => "integration",
        };
        let status = o
            .result
            .exit_status
            .map(|c| c.to_string())
            .unwrap_or_else(|| "(signal)".to_string());
        out.push_str(&format!(
            "[{kind} {}] exit status {status}\n{}\n",
            o.key,
            o.result.output().trim_end()
        ));
    }
    if out.is_empty() {
        "(tests passed)".to_string()
    } else {
        out
    }
}

fn snapshot_tree(ws: &Workspace) -> Result<BTreeMap<String, String>, WorkspaceError> {
    let mut snapshot = BTreeMap::new();
    for file in ws.list_files()? {
        let content = ws.read(&file)?;
        snapshot.insert(file, content);
    }
    Ok(snapshot)
}

fn restore_tree(
    ws: &Workspace,
    snapshot: &BTreeMap<String, String>,
) -> Result<(), WorkspaceError> {
    for file in ws.list_files()? {
        if !snapshot.contains_key(&file) {
            ws.remove(&file)?;
        }
    }
    for (file, content) in snapshot {
        if ws.read(file).ok().as_deref() != Some(content.as_str()) {
            ws.write(file, content)?;
        }
    }
    Ok(())
}

struct EditSession {
    patches: Vec<Patch>,
    terminated: bool,
}

/// Runs one bounded edit session against a shadow: the oracle issues one
/// edit command per step, each applied edit answers with its diff, and each
/// edit error answers as an observation instead of aborting the session.
fn run_edit_session(
    oracle: &Oracle,
    shadow: &mut Shadow,
    leaf_id: &NodeId,
    task: &str,
    file: &str,
    localized_context: &str,
    failure_report: &str,
    budget: &BuildBudget,
    log: &TrajectoryLog,
) -> Result<EditSession, BuildError> {
    let mut history = String::new();
    let mut patches = Vec::new();
    let mut terminated = false;
    for step in 1..=budget.edit_steps {
        let target_source = if shadow.exists(file) {
            shadow.read(file)?
        } else {
            "(new file)".to_string()
        };
        let blocks = oracle.exchange(
            "edit",
            &SlotBindings::new()
                .set("task", task)
                .set("file", file)
                .set("target_source", target_source)
                .set("localized_context", localized_context)
                .set("failure_report", failure_report)
                .set("history", if history.is_empty() { "(none)" } else { history.as_str() }),
        )?;
        let text = blocks.payload.as_text().unwrap_or_default().to_string();
        let observation = match wire::split_edit_response(&text) {
            Err(e) => {
                log.record(TrajectoryEvent::EditRejected {
                    leaf: leaf_id.to_string(),
                    message: e.to_string(),
                })?;
                format!("Error: {e}")
            }
            Ok((call, code)) => match EditCommand::from_tool_call(&call, code) {
                Err(e) => {
                    log.record(TrajectoryEvent::EditRejected {
                        leaf: leaf_id.to_string(),
                        message: e.to_string(),
                    })?;
                    format!("Error: {e}")
                }
                Ok(EditCommand::Terminate) => {
                    terminated = true;
                    break;
                }
                Ok(cmd) => match apply_edit(shadow, &cmd, leaf_id) {
                    Err(e) => {
                        log.record(TrajectoryEvent::EditRejected {
                            leaf: leaf_id.to_string(),
                            message: e.to_string(),
                        })?;
                        format!("Error: {e}")
                    }
                    Ok(patch) => {
                        log.record(TrajectoryEvent::EditApplied {
                            leaf: leaf_id.to_string(),
                            file: patch.file.clone(),
                            after_digest: patch.after_digest.clone(),
                        })?;
                        let diff = format!("# Code Patch Diff:\n{}", patch.diff.trim_end());
                        patches.push(patch);
                        diff
                    }
                },
            },
        };
        history.push_str(&format!("Step {step}:\n{}\nEnv: {}\n\n", text.trim(), observation));
    }
    Ok(EditSession { patches, terminated })
}

/// Implements one leaf through the localize, edit, test loop. Each
/// iteration edits a shadow, commits it, and runs the harness; a failing
/// iteration restores the workspace byte for byte and carries its failure
/// report into the next iteration.
pub fn implement_leaf(
    ws: &Workspace,
    sandbox: &dyn Sandbox,
    oracle: &Oracle,
    rpg: &Rpg,
    leaf_id: &NodeId,
    store: &mut NodeStore,
    log: &TrajectoryLog,
    budget: &BuildBudget,
    harness_config: &HarnessConfig,
) -> Result<LeafReport, BuildError> {
    budget.validate()?;
    let leaf = rpg
        .node(leaf_id)
        .ok_or_else(|| BuildError::Invalid(format!("unknown leaf {leaf_id}")))?;
    let file = primary_file(leaf)?;
    let task = leaf_task(leaf);
    log.record(TrajectoryEvent::LeafStarted { leaf: leaf_id.to_string() })?;

    let mut failure_report = "(none)".to_string();
    let mut last_failure = None;
    for iteration in 1..=budget.debug_iterations {
        log.record(TrajectoryEvent::DebugIteration { leaf: leaf_id.to_string(), iteration })?;

        let located =
            localization::run_localization(oracle, ws, rpg, &task, budget.localization_attempts)?;
        for step in 1..=located.steps {
            let tool = located
                .trace
                .get(step - 1)
                .map(|s| tool_name(s))
                .unwrap_or_else(|| "(none)".to_string());
            log.record(TrajectoryEvent::LocalizationStep {
                leaf: leaf_id.to_string(),
                step: step as u32,
                tool,
                ok: located.flag.is_none(),
            })?;
        }
        let specs: Vec<String> = located
            .entries
            .iter()
            .map(|e| format!("{}:{}", e.file_path, descriptor_name(&e.interface)))
            .collect();
        let localized_context = if specs.is_empty() {
            "(none)".to_string()
        } else {
            localization::get_interface_content(ws, &specs)
        };

        let mut shadow = ws.shadow();
        let session = run_edit_session(
            oracle,
            &mut shadow,
            leaf_id,
            &task,
            &file,
            &localized_context,
            &failure_report,
            budget,
            log,
        )?;

        let before = snapshot_tree(ws)?;
        shadow.commit()?;
        let ctx = TaskContext { task: task.clone(), dependency_code: localized_context };
        let report = harness::test_patches(
            ws,
            sandbox,
            oracle,
            &ctx,
            rpg,
            &session.patches,
            store,
            harness_config,
        )?;
        for outcome in report.unit_outcomes.iter().chain(report.integration_outcomes.iter()) {
            log.record(TrajectoryEvent::TestExecution {
                leaf: leaf_id.to_string(),
                node: outcome.key.clone(),
                passed: outcome.result.passed(),
                result_digest: sha256_hex(&outcome.result.output()),
            })?;
        }

        if report.all_passed() {
            log.record(TrajectoryEvent::LeafOutcome {
                leaf: leaf_id.to_string(),
                outcome: "committed".to_string(),
                iterations: iteration,
            })?;
            return Ok(LeafReport {
                leaf: leaf_id.clone(),
                status: LeafStatus::Committed,
                iterations: iteration,
                patches: session.patches,
                built_on_stub: Vec::new(),
                failure: None,
            });
        }

        restore_tree(ws, &before)?;
        failure_report = render_failure(&report);
        last_failure = Some(failure_report.clone());
        if !session.terminated {
            failure_report
                .push_str("\n(the previous edit session ran out of steps before Terminate)");
        }
    }

    log.record(TrajectoryEvent::LeafOutcome {
        leaf: leaf_id.to_string(),
        outcome: "failed".to_string(),
        iterations: budget.debug_iterations,
    })?;
    Ok(LeafReport {
        leaf: leaf_id.clone(),
        status: LeafStatus::Failed,
        iterations: budget.debug_iterations,
        patches: Vec::new(),
        built_on_stub: Vec::new(),
        failure: last_failure,
    })
}

fn root_of(rpg: &Rpg, id: &NodeId) -> NodeId {
    let mut cursor = id.clone();
    while let Some(parent) = rpg.parent(&cursor) {
        cursor = parent.clone();
    }
    cursor
}

/// The root itself plus every transitive dataflow ancestor.
fn upstream_roots(rpg: &Rpg, root: &NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([root.clone()]);
    let mut frontier = vec![root.clone()];
    while let Some(current) = frontier.pop() {
        for edge in &rpg.edges {
            if let RpgEdge::Dataflow { from, to, .. } = edge {
                if *to == current && seen.insert(from.clone()) {
                    frontier.push(from.clone());
                }
            }
        }
    }
    seen
}

/// Implements every leaf in topological order. A failed leaf never blocks
/// its dataflow descendants: they build against the failed leaf's stub
/// interfaces, and their reports name those stub dependencies.
pub fn generate_repository(
    ws: &Workspace,
    sandbox: &dyn Sandbox,
    oracle: &Oracle,
    rpg: &Rpg,
    store: &mut NodeStore,
    log: &TrajectoryLog,
    budget: &BuildBudget,
    harness_config: &HarnessConfig,
) -> Result<BuildReport, BuildError> {
    budget.validate()?;
    let order: Vec<NodeId> = rpg
        .topological_order()
        .map_err(|e| BuildError::Invalid(e.to_string()))?
        .iter()
        .map(|n| n.id.clone())
        .collect();

    let mut failed_by_root: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut report = BuildReport::default();
    for leaf_id in order {
        let root = root_of(rpg, &leaf_id);
        let stub_dependencies: Vec<NodeId> = upstream_roots(rpg, &root)
            .iter()
            .flat_map(|r| failed_by_root.get(r).cloned().unwrap_or_default())
            .collect();
        let mut leaf_report = implement_leaf(
            ws,
            sandbox,
            oracle,
            rpg,
            &leaf_id,
            store,
            log,
            budget,
            harness_config,
        )?;
        leaf_report.built_on_stub = stub_dependencies;
        if leaf_report.status == LeafStatus::Failed {
            failed_by_root.entry(root).or_default().push(leaf_id.clone());
        }
        report.leaves.push(leaf_report);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workspace::Workspace;

    fn leaf() -> NodeId {
        NodeId::new("leaf-under-test")
    }

    fn with_file(content: &str) -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        ws.write("src/mod.py", content).unwrap();
        (dir, ws)
    }

    #[test]
    fn method_replacement_preserves_sibling_methods_byte_exactly() {
        let original = "class C:\n    def keep(self):\n        return 'untouched'\n\n    def m(self):\n        return 1\n";
        let (_dir, ws) = with_file(original);
        let mut shadow = ws.shadow();
        let cmd = EditCommand::MethodOfClass {
            file: "src/mod.py".into(),
            class_name: "C".into(),
            method_name: "m".into(),
            body: "class C:\n    def m(self):\n        return 2\n".into(),
        };
        let patch = apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let new = shadow.read("src/mod.py").unwrap();
        assert!(new.contains("def keep(self):\n        return 'untouched'\n"));
        assert!(new.contains("return 2"));
        assert!(!new.contains("return 1"));
        assert_eq!(patch.before_digest, sha256_hex(original));
        assert_eq!(patch.after_digest, sha256_hex(&new));
        let replayed = textdiff::apply_unified(original, &patch.diff).unwrap();
        assert_eq!(sha256_hex(&replayed), patch.after_digest);
    }

    #[test]
    fn class_with_two_methods_keeps_both_after_editing_one() {
        let original = "class C:\n    def a(self):\n        return 'a'\n\n    def b(self):\n        return 'b'\n";
        let (_dir, ws) = with_file(original);
        let mut shadow = ws.shadow();
        let cmd = EditCommand::MethodOfClass {
            file: "src/mod.py".into(),
            class_name: "C".into(),
            method_name: "a".into(),
            body: "class C:\n    def a(self):\n        return 'A!'\n".into(),
        };
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let module = pysrc::parse_module(&shadow.read("src/mod.py").unwrap());
        let c = module.find_class("C").unwrap();
        assert_eq!(c.methods.len(), 2, "editing one method must not drop the other");
    }

    #[test]
    fn method_body_with_extra_method_violates_class_block_rule() {
        let cmd = EditCommand::MethodOfClass {
            file: "src/mod.py".into(),
            class_name: "C".into(),
            method_name: "m".into(),
            body: "class C:\n    def m(self):\n        pass\n    def extra(self):\n        pass\n".into(),
        };
        match cmd.check_body_contract() {
            Err(EditError::Contract(msg)) => assert!(msg.contains("only C.m"), "got {msg}"),
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn method_edit_on_missing_class_errors() {
        let (_dir, ws) = with_file("def lonely():\n    pass\n");
        let mut shadow = ws.shadow();
        let cmd = EditCommand::MethodOfClass {
            file: "src/mod.py".into(),
            class_name: "Ghost".into(),
            method_name: "m".into(),
            body: "class Ghost:\n    def m(self):\n        pass\n".into(),
        };
        assert!(matches!(
            apply_edit(&mut shadow, &cmd, &leaf()),
            Err(EditError::MissingTarget { .. })
        ));
    }

    #[test]
    fn missing_method_is_appended_inside_class() {
        let (_dir, ws) = with_file("class C:\n    def a(self):\n        return 1\n");
        let mut shadow = ws.shadow();
        let cmd = EditCommand::MethodOfClass {
            file: "src/mod.py".into(),
            class_name: "C".into(),
            method_name: "fresh".into(),
            body: "class C:\n    def fresh(self):\n        return 2\n".into(),
        };
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let module = pysrc::parse_module(&shadow.read("src/mod.py").unwrap());
        let names: Vec<&str> =
            module.find_class("C").unwrap().methods.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, vec!["a", "fresh"]);
    }

    #[test]
    fn function_edit_on_absent_name_appends_at_end() {
        let original = "import os\n\n\ndef first():\n    return os.name\n";
        let (_dir, ws) = with_file(original);
        let mut shadow = ws.shadow();
        let cmd = EditCommand::Function {
            file: "src/mod.py".into(),
            function_name: "second".into(),
            body: "def second():\n    return 2\n".into(),
        };
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let new = shadow.read("src/mod.py").unwrap();
        // Structural oracle: the appended function is the last item and
        // everything before it is the original text.
        let module = pysrc::parse_module(&new);
        assert!(matches!(module.items.last().unwrap(), PyItem::Function(f) if f.name == "second"));
        assert!(new.starts_with(original.trim_end()));
    }

    #[test]
    fn function_replacement_is_idempotent() {
        let (_dir, ws) = with_file("def f():\n    return 'old'\n");
        let cmd = EditCommand::Function {
            file: "src/mod.py".into(),
            function_name: "f".into(),
            body: "def f():\n    return 'new'\n".into(),
        };
        let mut shadow = ws.shadow();
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let once = shadow.read("src/mod.py").unwrap();
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let twice = shadow.read("src/mod.py").unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn whole_class_replaces_or_appends() {
        let (_dir, ws) = with_file("class A:\n    pass\n");
        let mut shadow = ws.shadow();
        let replace = EditCommand::WholeClass {
            file: "src/mod.py".into(),
            class_name: "A".into(),
            body: "class A:\n    def run(self):\n        return 1\n".into(),
        };
        apply_edit(&mut shadow, &replace, &leaf()).unwrap();
        let append = EditCommand::WholeClass {
            file: "src/mod.py".into(),
            class_name: "B".into(),
            body: "class B(A):\n    pass\n".into(),
        };
        apply_edit(&mut shadow, &append, &leaf()).unwrap();
        let module = pysrc::parse_module(&shadow.read("src/mod.py").unwrap());
        assert!(module.find_class("A").unwrap().methods.len() == 1);
        assert_eq!(module.find_class("B").unwrap().bases, vec!["A"]);
    }

    #[test]
    fn imports_edit_adds_one_keeping_two_existing() {
        let (_dir, ws) = with_file("import os\nimport sys\n\n\ndef f():\n    return os.sep + sys.prefix\n");
        let mut shadow = ws.shadow();
        let cmd = EditCommand::ImportsAndAssignments {
            file: "src/mod.py".into(),
            body: "import json\n".into(),
        };
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let new = shadow.read("src/mod.py").unwrap();
        let module = pysrc::parse_module(&new);
        let imports: Vec<&str> = module.imports().map(|s| s.trim_end()).collect();
        assert_eq!(imports.len(), 3);
        assert!(imports.contains(&"import os"));
        assert!(imports.contains(&"import sys"));
        assert!(imports.contains(&"import json"));
        assert!(new.contains("def f():"), "function body must survive an imports edit");
    }

    #[test]
    fn imports_body_with_function_rejected() {
        let cmd = EditCommand::ImportsAndAssignments {
            file: "src/mod.py".into(),
            body: "import os\n\ndef sneaky():\n    pass\n".into(),
        };
        assert!(matches!(cmd.check_body_contract(), Err(EditError::Contract(_))));
    }

    #[test]
    fn imports_body_out_of_order_rejected() {
        let cmd = EditCommand::ImportsAndAssignments {
            file: "src/mod.py".into(),
            body: "from src.core import thing\nimport os\n".into(),
        };
        match cmd.check_body_contract() {
            Err(EditError::Contract(msg)) => assert!(msg.contains("ordered"), "got {msg}"),
            other => panic!("expected ordering violation, got {other:?}"),
        }
    }

    #[test]
    fn unresolvable_local_import_dropped_when_corrected_form_arrives() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        ws.write("src/utils.py", "def clean():\n    pass\n").unwrap();
        ws.write("src/mod.py", "from src.utls import clean\n").unwrap();
        let mut shadow = ws.shadow();
        let cmd = EditCommand::ImportsAndAssignments {
            file: "src/mod.py".into(),
            body: "from src.utils import clean\n".into(),
        };
        let patch = apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let new = shadow.read("src/mod.py").unwrap();
        assert!(!new.contains("utls"), "typo import must be replaced: {new}");
        assert!(new.contains("from src.utils import clean"));
        assert_eq!(patch.notes.len(), 1);
    }

    #[test]
    fn resolvable_unused_import_is_retained() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        ws.write("src/extras.py", "VALUE = 1\n").unwrap();
        ws.write("src/mod.py", "from src.extras import VALUE\n").unwrap();
        let mut shadow = ws.shadow();
        let cmd = EditCommand::ImportsAndAssignments {
            file: "src/mod.py".into(),
            body: "import os\n".into(),
        };
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let new = shadow.read("src/mod.py").unwrap();
        assert!(new.contains("from src.extras import VALUE"));
    }

    #[test]
    fn assignment_merge_replaces_in_place_and_appends_new() {
        let (_dir, ws) = with_file("import os\n\nLIMIT = 1\n\n\ndef f():\n    return LIMIT\n");
        let mut shadow = ws.shadow();
        let cmd = EditCommand::ImportsAndAssignments {
            file: "src/mod.py".into(),
            body: "import os\n\nLIMIT = 99\nEXTRA = 'x'\n".into(),
        };
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let new = shadow.read("src/mod.py").unwrap();
        assert!(new.contains("LIMIT = 99"));
        assert!(!new.contains("LIMIT = 1"));
        assert!(new.contains("EXTRA = 'x'"));
        assert!(new.find("EXTRA").unwrap() < new.find("def f").unwrap());
    }

    #[test]
    fn tool_call_mapping_covers_all_edit_tools() {
        let call = crate::wire::parse_tool_call(
            "edit_method_of_class_in_file(\"src/m.py\", \"C\", \"m\")",
        )
        .unwrap();
        let cmd = EditCommand::from_tool_call(
            &call,
            Some("class C:\n    def m(self):\n        pass\n".into()),
        )
        .unwrap();
        assert!(matches!(cmd, EditCommand::MethodOfClass { .. }));

        let call = crate::wire::parse_tool_call("Terminate()").unwrap();
        assert_eq!(EditCommand::from_tool_call(&call, None).unwrap(), EditCommand::Terminate);

        let call = crate::wire::parse_tool_call("edit_function_in_file(\"f.py\", \"g\")").unwrap();
        assert!(matches!(
            EditCommand::from_tool_call(&call, None),
            Err(EditError::MissingCode(_))
        ));

        let call = crate::wire::parse_tool_call("unknown_tool()").unwrap();
        assert!(matches!(
            EditCommand::from_tool_call(&call, None),
            Err(EditError::UnknownTool(_))
        ));
    }

    #[test]
    fn method_indentation_adapts_to_target_class() {
        let (_dir, ws) = with_file("class C:\n  def a(self):\n    return 1\n");
        let mut shadow = ws.shadow();
        let cmd = EditCommand::MethodOfClass {
            file: "src/mod.py".into(),
            class_name: "C".into(),
            method_name: "a".into(),
            body: "class C:\n        def a(self):\n            return 2\n".into(),
        };
        apply_edit(&mut shadow, &cmd, &leaf()).unwrap();
        let new = shadow.read("src/mod.py").unwrap();
        assert!(new.contains("\n  def a(self):\n"), "two-space class style kept: {new}");
        assert!(new.contains("\n      return 2\n"), "body keeps +4 relative depth: {new}");
    }

    use crate::graph::{InterfaceKind, InterfaceRef, NodeKind, Phase};
    use crate::oracle::ScriptedBackend;
    use crate::sandbox::SubprocessSandbox;

    const LINREG_STUB: &str = "def predict_mean(values):\n    \"\"\"Mean of the input values.\n\n    Args:\n        values: Input numbers.\n\n    Returns:\n        The arithmetic mean.\n\n    Raises:\n        ValueError: On empty input.\n    \"\"\"\n    raise NotImplementedError\n";

    const METRICS_STUB: &str = "def mse(predictions, targets):\n    \"\"\"Mean squared error.\n\n    Args:\n        predictions: Predicted values.\n        targets: True values.\n\n    Returns:\n        The mean squared error.\n\n    Raises:\n        ValueError: On length mismatch.\n    \"\"\"\n    raise NotImplementedError\n";

    const MEAN_OK: &str = "def predict_mean(values):\n    \"\"\"Mean of the input values.\n\n    Args:\n        values: Input numbers.\n\n    Returns:\n        The arithmetic mean.\n\n    Raises:\n        ValueError: On empty input.\n    \"\"\"\n    if not values:\n        raise ValueError('empty input')\n    return sum(values) / len(values)\n";

    const MEAN_BAD: &str = "def predict_mean(values):\n    \"\"\"Mean of the input values.\n\n    Args:\n        values: Input numbers.\n\n    Returns:\n        The arithmetic mean.\n\n    Raises:\n        ValueError: On empty input.\n    \"\"\"\n    return 0.0\n";

    const MSE_OK: &str = "def mse(predictions, targets):\n    \"\"\"Mean squared error.\n\n    Args:\n        predictions: Predicted values.\n        targets: True values.\n\n    Returns:\n        The mean squared error.\n\n    Raises:\n        ValueError: On length mismatch.\n    \"\"\"\n    if len(predictions) != len(targets):\n        raise ValueError('length mismatch')\n    return sum((p - t) ** 2 for p, t in zip(predictions, targets)) / len(targets)\n";

    const MEAN_TEST: &str = "from src.algorithms.linreg import predict_mean\n\nassert predict_mean([2.0, 4.0]) == 3.0\nprint('ok')\n";

    const MEAN_STUB_TEST: &str = "from src.algorithms.linreg import predict_mean\n\nassert callable(predict_mean)\nprint('ok')\n";

    const MSE_TEST: &str = "from src.evaluation.metrics import mse\n\nassert mse([1.0, 2.0], [1.0, 2.0]) == 0.0\nprint('ok')\n";

    const INTEG_TEST: &str = "from src.algorithms.linreg import predict_mean\nfrom src.evaluation.metrics import mse\n\nassert callable(predict_mean) and callable(mse)\nprint('ok')\n";

    fn add_subtree(g: &mut Rpg, root_id: &str, label: &str, dir: &str, file: &str, iface: InterfaceRef, feat: &str) {
        let mut root = RpgNode::new(root_id, label, NodeKind::SubgraphRoot);
        root.structure = Some(Binding::Dir(dir.to_string()));
        g.nodes.push(root);
        let comp_id = format!("{root_id}/core");
        let mut comp = RpgNode::new(&comp_id, "core", NodeKind::Component);
        comp.structure = Some(Binding::Files(BTreeSet::from([file.to_string()])));
        g.nodes.push(comp);
        g.edges.push(RpgEdge::Hierarchy { from: NodeId::new(root_id), to: NodeId::new(&comp_id) });
        let leaf_id = format!("{root_id}/core/leaf");
        let mut leaf_node = RpgNode::new(&leaf_id, feat, NodeKind::Leaf);
        leaf_node.feature_paths.insert(format!("{label}/{feat}").parse().unwrap());
        leaf_node.structure = Some(Binding::Interfaces(BTreeSet::from([iface])));
        g.nodes.push(leaf_node);
        g.edges.push(RpgEdge::Hierarchy {
            from: NodeId::new(&comp_id),
            to: NodeId::new(&leaf_id),
        });
    }

    fn single_root_fixture() -> (tempfile::TempDir, Workspace, Rpg) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        ws.write("src/__init__.py", "").unwrap();
        ws.write("src/algorithms/__init__.py", "").unwrap();
        ws.write("src/algorithms/linreg.py", LINREG_STUB).unwrap();
        let mut g = Rpg::new(Phase::Implementation);
        add_subtree(
            &mut g,
            "algorithms",
            "Algorithms",
            "src/algorithms",
            "src/algorithms/linreg.py",
            InterfaceRef::new("src/algorithms/linreg.py", "predict_mean", InterfaceKind::Function),
            "mean prediction",
        );
        assert!(g.validate().is_empty(), "{:?}", g.validate());
        (dir, ws, g)
    }

    fn two_root_fixture() -> (tempfile::TempDir, Workspace, Rpg) {
        let (dir, ws, mut g) = single_root_fixture();
        ws.write("src/evaluation/__init__.py", "").unwrap();
        ws.write("src/evaluation/metrics.py", METRICS_STUB).unwrap();
        add_subtree(
            &mut g,
            "evaluation",
            "Evaluation",
            "src/evaluation",
            "src/evaluation/metrics.py",
            InterfaceRef::new("src/evaluation/metrics.py", "mse", InterfaceKind::Function),
            "mse metric",
        );
        g.edges.push(RpgEdge::Dataflow {
            from: NodeId::new("algorithms"),
            to: NodeId::new("evaluation"),
            data_id: "predictions".into(),
            data_type: "list[float]".into(),
            transformation: "none".into(),
        });
        assert!(g.validate().is_empty(), "{:?}", g.validate());
        (dir, ws, g)
    }

    fn loc_done(entries: &[(&str, &str)]) -> String {
        let items = entries
            .iter()
            .map(|(file, iface)| {
                format!("{{\"file_path\": \"{file}\", \"interface\": \"{iface}\"}}")
            })
            .collect::<Vec<_>>()
            .join(", ");
        format!("<solution>\nTerminate(result=[{items}])\n</solution>")
    }

    fn edit_fn(file: &str, name: &str, body: &str) -> String {
        format!(
            "<solution>\nedit_function_in_file(\"{file}\", \"{name}\")\n```python\n{body}```\n</solution>"
        )
    }

    fn edit_done() -> String {
        "<solution>\nTerminate()\n</solution>".to_string()
    }

    fn branches(names: &[&str]) -> String {
        format!(
            "<action>\n{{\"branches\": [{}]}}\n</action>",
            names.iter().map(|n| format!("\"{n}\"")).collect::<Vec<_>>().join(", ")
        )
    }

    fn gen_test(code: &str) -> String {
        format!("<solution>\n```python\n{code}```\n</solution>")
    }

    fn impl_vote() -> String {
        "<action>\n{\"err_type\": \"implementation\", \"review\": \"logic wrong\"}\n</action>"
            .to_string()
    }

    fn build_env(
        backend: ScriptedBackend,
    ) -> (Oracle, SubprocessSandbox, crate::trajectory::TrajectoryLog, NodeStore, BuildBudget, HarnessConfig) {
        (
            Oracle::new(Box::new(backend)),
            SubprocessSandbox::new(),
            crate::trajectory::TrajectoryLog::in_memory(),
            NodeStore::default(),
            BuildBudget::default(),
            HarnessConfig::default(),
        )
    }

    #[test]
    fn correct_first_try_commits_in_one_iteration() {
        let (_dir, ws, g) = single_root_fixture();
        let mut backend = ScriptedBackend::new();
        backend.push(
            "localize",
            &loc_done(&[("src/algorithms/linreg.py", "function: predict_mean")]),
        );
        backend.push("edit", &edit_fn("src/algorithms/linreg.py", "predict_mean", MEAN_OK));
        backend.push("edit", &edit_done());
        backend.push("test_branch", &branches(&["returns_mean"]));
        backend.push("test_generate", &gen_test(MEAN_TEST));
        let (oracle, sandbox, log, mut store, budget, config) = build_env(backend);
        let report = generate_repository(
            &ws, &sandbox, &oracle, &g, &mut store, &log, &budget, &config,
        )
        .unwrap();
        assert_eq!(report.committed(), 1);
        assert_eq!(report.failed(), 0);
        let leaf_report = &report.leaves[0];
        assert_eq!(leaf_report.status, LeafStatus::Committed);
        assert_eq!(leaf_report.iterations, 1);
        assert_eq!(leaf_report.patches.len(), 1);
        let code = ws.read("src/algorithms/linreg.py").unwrap();
        assert!(code.contains("return sum(values) / len(values)"));
        assert!(ws.exists("tests/algorithms/test_linreg.py"), "unit test file committed");
    }

    #[test]
    fn failing_body_exhausts_the_debug_budget_and_restores_the_workspace() {
        let (_dir, ws, g) = single_root_fixture();
        let before = ws.tree_digest().unwrap();
        let mut backend = ScriptedBackend::new();
        for _ in 0..8 {
            backend.push("localize", &loc_done(&[]));
            backend.push("edit", &edit_fn("src/algorithms/linreg.py", "predict_mean", MEAN_BAD));
            backend.push("edit", &edit_done());
        }
        backend.push("test_branch", &branches(&["returns_mean"]));
        backend.push("test_generate", &gen_test(MEAN_TEST));
        for _ in 0..5 {
            backend.push("judge_failure", &impl_vote());
        }
        let (oracle, sandbox, log, mut store, budget, config) = build_env(backend);
        let report = generate_repository(
            &ws, &sandbox, &oracle, &g, &mut store, &log, &budget, &config,
        )
        .unwrap();
        let leaf_report = &report.leaves[0];
        assert_eq!(leaf_report.status, LeafStatus::Failed);
        assert_eq!(leaf_report.iterations, 8);
        assert!(leaf_report.patches.is_empty(), "no patch from a failed leaf is kept");
        assert!(leaf_report.failure.as_deref().unwrap_or("").contains("exit status"));
        assert_eq!(ws.tree_digest().unwrap(), before, "failed build must leave no trace");
        let iterations = log
            .events()
            .iter()
            .filter(|e| matches!(e, TrajectoryEvent::DebugIteration { .. }))
            .count();
        assert_eq!(iterations, 8);
        assert!(log.events().iter().any(|e| matches!(
            e,
            TrajectoryEvent::LeafOutcome { outcome, iterations: 8, .. } if outcome == "failed"
        )));
    }

    #[test]
    fn edit_errors_feed_back_as_observations_and_the_iteration_recovers() {
        let (_dir, ws, g) = single_root_fixture();
        let mut backend = ScriptedBackend::new();
        backend.push("localize", &loc_done(&[]));
        backend.push(
            "edit",
            "<solution>\nedit_method_of_class_in_file(\"src/algorithms/linreg.py\", \"Ghost\", \"run\")\n```python\nclass Ghost:\n    def run(self):\n        pass\n```\n</solution>",
        );
        backend.push("edit", &edit_fn("src/algorithms/linreg.py", "predict_mean", MEAN_OK));
        backend.push("edit", &edit_done());
        backend.push("test_branch", &branches(&["returns_mean"]));
        backend.push("test_generate", &gen_test(MEAN_TEST));
        let (oracle, sandbox, log, mut store, budget, config) = build_env(backend);
        let report = generate_repository(
            &ws, &sandbox, &oracle, &g, &mut store, &log, &budget, &config,
        )
        .unwrap();
        assert_eq!(report.leaves[0].status, LeafStatus::Committed);
        assert_eq!(report.leaves[0].patches.len(), 1);
        assert!(log.events().iter().any(|e| matches!(
            e,
            TrajectoryEvent::EditRejected { message, .. } if message.contains("Ghost")
        )));
    }

    #[test]
    fn two_edit_session_chains_patch_digests_and_commits_both() {
        let (_dir, ws, g) = single_root_fixture();
        let mean_with_math = "def predict_mean(values):\n    \"\"\"Mean of the input values.\n\n    Args:\n        values: Input numbers.\n\n    Returns:\n        The arithmetic mean.\n\n    Raises:\n        ValueError: On empty input.\n    \"\"\"\n    if not values:\n        raise ValueError('empty input')\n    return math.fsum(values) / len(values)\n";
        let mut backend = ScriptedBackend::new();
        backend.push("localize", &loc_done(&[]));
        backend.push("edit", &edit_fn("src/algorithms/linreg.py", "predict_mean", mean_with_math));
        backend.push(
            "edit",
            "<solution>\nedit_imports_and_assignments_in_file(\"src/algorithms/linreg.py\")\n```python\nimport math\n```\n</solution>",
        );
        backend.push("edit", &edit_done());
        backend.push("test_branch", &branches(&["returns_mean"]));
        backend.push("test_generate", &gen_test(MEAN_TEST));
        let (oracle, sandbox, log, mut store, budget, config) = build_env(backend);
        let report = generate_repository(
            &ws, &sandbox, &oracle, &g, &mut store, &log, &budget, &config,
        )
        .unwrap();
        let leaf_report = &report.leaves[0];
        assert_eq!(leaf_report.status, LeafStatus::Committed);
        assert_eq!(leaf_report.patches.len(), 2);
        assert_eq!(
            leaf_report.patches[1].before_digest, leaf_report.patches[0].after_digest,
            "sequential patches on one file must chain digests"
        );
        let code = ws.read("src/algorithms/linreg.py").unwrap();
        assert!(code.starts_with("import math\n"));
        assert!(code.contains("math.fsum"));
    }

    #[test]
    fn immediate_terminate_with_passing_state_commits_zero_patches() {
        let (_dir, ws, g) = single_root_fixture();
        let before = ws.tree_digest().unwrap();
        let mut backend = ScriptedBackend::new();
        backend.push("localize", &loc_done(&[]));
        backend.push("edit", &edit_done());
        let (oracle, sandbox, log, mut store, budget, config) = build_env(backend);
        let report = generate_repository(
            &ws, &sandbox, &oracle, &g, &mut store, &log, &budget, &config,
        )
        .unwrap();
        let leaf_report = &report.leaves[0];
        assert_eq!(leaf_report.status, LeafStatus::Committed);
        assert!(leaf_report.patches.is_empty());
        assert_eq!(leaf_report.iterations, 1);
        assert_eq!(ws.tree_digest().unwrap(), before);
    }

    #[test]
    fn failed_upstream_leaf_degrades_downstream_to_built_on_stub() {
        let (_dir, ws, g) = two_root_fixture();
        let mut backend = ScriptedBackend::new();
        // Upstream leaf: one failing iteration against a wrong mean body.
        backend.push("localize", &loc_done(&[]));
        backend.push("edit", &edit_fn("src/algorithms/linreg.py", "predict_mean", MEAN_BAD));
        backend.push("edit", &edit_done());
        // Downstream leaf: a correct mse implementation.
        backend.push(
            "localize",
            &loc_done(&[("src/algorithms/linreg.py", "function: predict_mean")]),
        );
        backend.push("edit", &edit_fn("src/evaluation/metrics.py", "mse", MSE_OK));
        backend.push("edit", &edit_done());
        // Upstream unit test (fails), then the dataflow integration test,
        // then the downstream unit, the regenerated stub-contract test, and
        // the refreshed integration test.
        backend.push("test_branch", &branches(&["returns_mean"]));
        backend.push("test_generate", &gen_test(MEAN_TEST));
        for _ in 0..5 {
            backend.push("judge_failure", &impl_vote());
        }
        backend.push("test_branch", &branches(&["pipeline_smoke"]));
        backend.push("test_generate", &gen_test(INTEG_TEST));
        backend.push("test_branch", &branches(&["zero_error"]));
        backend.push("test_generate", &gen_test(MSE_TEST));
        backend.push("test_branch", &branches(&["stub_contract"]));
        backend.push("test_generate", &gen_test(MEAN_STUB_TEST));
        backend.push("test_branch", &branches(&["pipeline_smoke"]));
        backend.push("test_generate", &gen_test(INTEG_TEST));
        let (oracle, sandbox, log, mut store, _, config) = build_env(backend);
        let budget = BuildBudget { debug_iterations: 1, ..BuildBudget::default() };
        let report = generate_repository(
            &ws, &sandbox, &oracle, &g, &mut store, &log, &budget, &config,
        )
        .unwrap();
        assert_eq!(report.leaves.len(), 2);
        let upstream = &report.leaves[0];
        let downstream = &report.leaves[1];
        assert_eq!(upstream.leaf, NodeId::new("algorithms/core/leaf"), "dataflow order");
        assert_eq!(upstream.status, LeafStatus::Failed);
        assert_eq!(downstream.status, LeafStatus::Committed);
        assert_eq!(downstream.built_on_stub, vec![NodeId::new("algorithms/core/leaf")]);
        assert_eq!(
            ws.read("src/algorithms/linreg.py").unwrap(),
            LINREG_STUB,
            "failed upstream leaf leaves its stub in place"
        );
        assert!(ws.read("src/evaluation/metrics.py").unwrap().contains("zip(predictions"));
    }
}
