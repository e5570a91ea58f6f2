//! Graph-guided localization: a read-only tool suite over the workspace
//! and graph, plus the bounded loop that maps a task description to a
//! ranked list of interface candidates.
//!
//! Tool failures are rendered as observation strings and fed back to the
//! oracle; the session itself only fails on oracle transport errors.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{Binding, InterfaceKind, NodeKind, Rpg};
use crate::ontology::FeaturePath;
use crate::oracle::{Oracle, OracleError, SlotBindings};
use crate::pysrc::{self, PyItem};
use crate::wire::{self, ToolCall};
use crate::workspace::Workspace;

/// One searchable interface: identity plus the text fields the scorer
/// matches against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub name: String,
    pub kind: InterfaceKind,
    pub features: BTreeSet<String>,
    pub doc: String,
}

impl IndexEntry {
    pub fn descriptor(&self) -> String {
        format!("{}: {}", self.kind, self.name)
    }
}

/// Search index over every interface bound in the graph, enriched with
/// doc contracts read from the workspace.
#[derive(Debug, Clone, Default)]
pub struct InterfaceIndex {
    entries: Vec<IndexEntry>,
    file_features: BTreeMap<String, BTreeSet<String>>,
}

impl InterfaceIndex {
    pub fn build(ws: &Workspace, rpg: &Rpg) -> Self {
        let mut by_key: BTreeMap<(String, String), IndexEntry> = BTreeMap::new();
        let mut file_features: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for leaf in rpg.leaves() {
            let Some(Binding::Interfaces(refs)) = &leaf.structure else { continue };
            for r in refs {
                let features: BTreeSet<String> =
                    leaf.feature_paths.iter().map(|f| f.to_string()).collect();
                file_features
                    .entry(r.file.clone())
                    .or_default()
                    .extend(features.iter().cloned());
                by_key
                    .entry((r.file.clone(), r.name.clone()))
                    .and_modify(|e| e.features.extend(features.iter().cloned()))
                    .or_insert_with(|| IndexEntry {
                        file: r.file.clone(),
                        name: r.name.clone(),
                        kind: r.kind,
                        features,
                        doc: read_doc(ws, &r.file, &r.name),
                    });
            }
        }
        InterfaceIndex { entries: by_key.into_values().collect(), file_features }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn features_of_file(&self, file: &str) -> BTreeSet<String> {
        self.file_features.get(file).cloned().unwrap_or_default()
    }
}

/// Docstring of `name` (optionally `Class.method`) in `file`, empty when
/// anything along the way is missing.
fn read_doc(ws: &Workspace, file: &str, name: &str) -> String {
    let Ok(source) = ws.read(file) else { return String::new() };
    let module = pysrc::parse_module(&source);
    let doc = match name.split_once('.') {
        Some((class_name, method_name)) => module
            .find_class(class_name)
            .and_then(|c| c.methods.iter().find(|m| m.name == method_name))
            .and_then(|m| m.docstring.clone()),
        None => module
            .find_function(name)
            .and_then(|f| f.docstring.clone())
            .or_else(|| module.find_class(name).and_then(|c| c.docstring.clone())),
    };
    doc.unwrap_or_default()
}

/// Structural outline of one parsed item, bodies elided to `...`.
fn outline_item(item: &PyItem) -> Option<String> {
    match item {
        PyItem::Function(f) => Some(format!("def {}:\n    ...", f.signature)),
        PyItem::Class(c) => {
            let header = if c.bases.is_empty() {
                format!("class {}:", c.name)
            } else {
                format!("class {}({}):", c.name, c.bases.join(", "))
            };
            if c.methods.is_empty() {
                return Some(format!("{header}\n    ..."));
            }
            let methods: Vec<String> = c
                .methods
                .iter()
                .map(|m| format!("    def {}:\n        ...", m.signature))
                .collect();
            Some(format!("{header}\n\n{}", methods.join("\n\n")))
        }
        _ => None,
    }
}

/// File summary: imports, feature tags, and the interface outline with
/// bodies elided.
pub fn view_file_interface_feature_map(
    ws: &Workspace,
    index: &InterfaceIndex,
    file: &str,
) -> Result<String, String> {
    let source = ws
        .read(file)
        .map_err(|_| format!("Error: file {file} not found."))?;
    let module = pysrc::parse_module(&source);
    let mut out = format!("## {file}\n");
    for import in module.imports() {
        out.push_str(import.trim_end());
        out.push('\n');
    }
    let features = index.features_of_file(file);
    out.push_str(&format!(
        "### Features: {}\n",
        if features.is_empty() {
            "(none)".to_string()
        } else {
            features.iter().cloned().collect::<Vec<_>>().join(", ")
        }
    ));
    let outlines: Vec<String> = module.items.iter().filter_map(outline_item).collect();
    if outlines.is_empty() {
        out.push_str("(no interfaces)\n");
    } else {
        out.push_str(&outlines.join("\n\n"));
        out.push('\n');
    }
    Ok(out)
}

/// Full source of each `file:Qualified.Name` target; unknown targets get
/// individual not-found markers instead of failing the batch.
pub fn get_interface_content(ws: &Workspace, specs: &[String]) -> String {
    let mut blocks = Vec::new();
    for spec in specs {
        blocks.push(render_target(ws, spec));
    }
    blocks.join("\n\n")
}

fn render_target(ws: &Workspace, spec: &str) -> String {
    let Some((file, name)) = spec.split_once(':') else {
        return format!("Target {spec} not found: expected \"file.py:Name\".");
    };
    let Ok(source) = ws.read(file) else {
        return format!("Target {spec} not found: file {file} does not exist.");
    };
    let module = pysrc::parse_module(&source);
    match name.split_once('.') {
        Some((class_name, method_name)) => {
            let Some(class) = module.find_class(class_name) else {
                return format!("Target {spec} not found in {file}.");
            };
            let Some(method) = class.methods.iter().find(|m| m.name == method_name) else {
                return format!("Target {spec} not found in {file}.");
            };
            let header = class
                .text
                .lines()
                .next()
                .unwrap_or("class ?:")
                .trim_end()
                .to_string();
            format!("# {file}\n{header}\n{}", method.text.trim_end_matches('\n'))
        }
        None => {
            if let Some(f) = module.find_function(name) {
                format!("# {file}\n{}", f.text.trim_end_matches('\n'))
            } else if let Some(c) = module.find_class(name) {
                format!("# {file}\n{}", c.text.trim_end_matches('\n'))
            } else {
                format!("Target {spec} not found in {file}.")
            }
        }
    }
}

/// Interfaces bound to the leaf carrying `feature_path`.
pub fn expand_leaf_node_info(rpg: &Rpg, feature_path: &str) -> Result<String, String> {
    let path: FeaturePath = feature_path
        .parse()
        .map_err(|e| format!("Error: bad feature path {feature_path}: {e}"))?;
    let leaf = rpg
        .nodes
        .iter()
        .find(|n| n.kind == NodeKind::Leaf && n.feature_paths.contains(&path))
        .ok_or_else(|| format!("Error: feature path {feature_path} not found in the graph."))?;
    let mut out = format!("Leaf: {feature_path}\n");
    match &leaf.structure {
        Some(Binding::Interfaces(refs)) if !refs.is_empty() => {
            out.push_str("Interfaces:\n");
            for r in refs {
                out.push_str(&format!("- {} :: {}\n", r.file, r.descriptor()));
            }
        }
        _ => out.push_str("No interfaces bound to this leaf yet.\n"),
    }
    Ok(out)
}

/// Lowercase word tokens of identifier-ish text: splits on non-alphanumerics
/// and camel-case boundaries.
fn word_tokens(text: &str) -> BTreeSet<String> {
    let mut tokens = BTreeSet::new();
    let mut current = String::new();
    let mut prev_lower = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            if c.is_ascii_uppercase() && prev_lower && !current.is_empty() {
                tokens.insert(current.to_ascii_lowercase());
                current.clear();
            }
            prev_lower = c.is_ascii_lowercase() || c.is_ascii_digit();
            current.push(c);
        } else {
            if !current.is_empty() {
                tokens.insert(current.to_ascii_lowercase());
                current.clear();
            }
            prev_lower = false;
        }
    }
    if !current.is_empty() {
        tokens.insert(current.to_ascii_lowercase());
    }
    tokens
}

fn squash(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Match score of one keyword against one entry: token overlap fraction
/// over name+doc+features, plus 0.5 when the squashed keyword is a
/// substring of the squashed interface name.
pub fn keyword_score(entry: &IndexEntry, keyword: &str) -> f64 {
    let kw_tokens = word_tokens(keyword);
    if kw_tokens.is_empty() {
        return 0.0;
    }
    let mut entry_tokens = word_tokens(&entry.name);
    entry_tokens.extend(word_tokens(&entry.doc));
    for f in &entry.features {
        entry_tokens.extend(word_tokens(f));
    }
    let overlap = kw_tokens.intersection(&entry_tokens).count();
    let mut score = overlap as f64 / kw_tokens.len() as f64;
    let kw_squashed = squash(keyword);
    if !kw_squashed.is_empty() && squash(&entry.name).contains(&kw_squashed) {
        score += 0.5;
    }
    score
}

/// All positively scoring entries for `keywords`, best first, ties broken
/// by (file, name).
pub fn search_ranked<'a>(
    index: &'a InterfaceIndex,
    keywords: &[String],
) -> Vec<(&'a IndexEntry, f64)> {
    let mut scored: Vec<(&IndexEntry, f64)> = index
        .entries()
        .iter()
        .map(|e| (e, keywords.iter().map(|k| keyword_score(e, k)).sum::<f64>()))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.file.cmp(&b.0.file))
            .then_with(|| a.0.name.cmp(&b.0.name))
    });
    scored
}

/// Fuzzy search over the interface index; renders per-keyword matches and
/// the top-5 interfaces with their file context.
pub fn search_interface_by_functionality(
    ws: &Workspace,
    index: &InterfaceIndex,
    keywords: &[String],
) -> Result<String, String> {
    if keywords.iter().all(|k| k.trim().is_empty()) {
        return Err("Error: search requires at least one keyword.".to_string());
    }
    let ranked = search_ranked(index, keywords);
    if ranked.is_empty() {
        return Ok("No interfaces matched the given keywords.".to_string());
    }
    let mut out = String::new();
    for keyword in keywords {
        let mut matches: Vec<(&IndexEntry, f64)> = index
            .entries()
            .iter()
            .map(|e| (e, keyword_score(e, keyword)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        matches.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.file.cmp(&b.0.file))
                .then_with(|| a.0.name.cmp(&b.0.name))
        });
        let names: Vec<String> = matches
            .iter()
            .take(5)
            .map(|(e, _)| format!("{} {}", e.kind, e.name))
            .collect();
        if names.is_empty() {
            out.push_str(&format!("Keyword \"{keyword}\" matched no interfaces.\n"));
        } else {
            out.push_str(&format!(
                "Keyword \"{keyword}\" matched interfaces: {}.\n",
                names.join(", ")
            ));
        }
    }

    let top: Vec<&IndexEntry> = ranked.iter().take(5).map(|(e, _)| *e).collect();
    let mut files: Vec<&str> = Vec::new();
    for entry in &top {
        if !files.contains(&entry.file.as_str()) {
            files.push(&entry.file);
        }
    }
    for file in files {
        out.push('\n');
        out.push_str(&format!("## File: {file}\n\n"));
        if let Ok(source) = ws.read(file) {
            let module = pysrc::parse_module(&source);
            let imports: Vec<&str> = module.imports().collect();
            if !imports.is_empty() {
                out.push_str(&imports.join("\n"));
                out.push_str("\n\n");
            }
            let features = index.features_of_file(file);
            out.push_str(&format!(
                "### Features: {}\n",
                features.iter().cloned().collect::<Vec<_>>().join(", ")
            ));
            for entry in top.iter().filter(|e| e.file == file) {
                let base_name = entry.name.split('.').next().unwrap_or(&entry.name);
                let item = module
                    .items
                    .iter()
                    .find(|i| match i {
                        PyItem::Function(f) => f.name == *base_name,
                        PyItem::Class(c) => c.name == *base_name,
                        _ => false,
                    })
                    .and_then(outline_item);
                if let Some(text) = item {
                    out.push_str(&text);
                    out.push('\n');
                }
            }
        } else {
            out.push_str("(file missing from workspace)\n");
        }
    }
    Ok(out)
}

/// One ranked hit in a localization result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationEntry {
    pub file_path: String,
    pub interface: String,
}

/// Outcome of a localization session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LocalizationResult {
    pub entries: Vec<LocalizationEntry>,
    /// Oracle exchanges spent, always ≤ the step cap.
    pub steps: usize,
    /// `Some("unterminated")` when the cap ran out before Terminate.
    pub flag: Option<String>,
    /// Tool-call snippets in dispatch order.
    pub trace: Vec<String>,
}

fn parse_terminate(call: &ToolCall) -> Result<Vec<LocalizationEntry>, String> {
    let arg = call
        .kwargs
        .get("result")
        .or_else(|| call.args.first())
        .ok_or("Error: Terminate requires a result argument.")?;
    let items = arg
        .as_list()
        .ok_or("Error: Terminate result must be a list.")?;
    let mut entries = Vec::new();
    for item in items {
        let dict = item
            .as_dict()
            .ok_or("Error: Terminate result entries must be objects.")?;
        let field = |key: &str| -> Result<String, String> {
            dict.get(key)
                .and_then(|v| v.as_str())
                .map(|s| s.to_string())
                .ok_or_else(|| format!("Error: Terminate entry missing \"{key}\"."))
        };
        entries.push(LocalizationEntry {
            file_path: field("file_path")?,
            interface: field("interface")?,
        });
    }
    Ok(entries)
}

/// Dispatches one parsed tool call against the read-only tool suite.
fn dispatch_tool(
    ws: &Workspace,
    rpg: &Rpg,
    index: &InterfaceIndex,
    call: &ToolCall,
) -> String {
    let str_list = |arg: &wire::ToolArg| -> Option<Vec<String>> {
        arg.as_list().map(|items| {
            items
                .iter()
                .filter_map(|i| i.as_str().map(|s| s.to_string()))
                .collect()
        })
    };
    match call.name.as_str() {
        "view_file_interface_feature_map" => match call.str_arg(0) {
            Some(file) => view_file_interface_feature_map(ws, index, file)
                .unwrap_or_else(|e| e),
            None => "Error: view_file_interface_feature_map(file_path) takes one string."
                .to_string(),
        },
        "get_interface_content" => match call.args.first().and_then(&str_list) {
            Some(specs) if !specs.is_empty() => get_interface_content(ws, &specs),
            _ => "Error: get_interface_content(target_specs) takes a list of \"file:Name\"."
                .to_string(),
        },
        "expand_leaf_node_info" => match call.str_arg(0) {
            Some(path) => expand_leaf_node_info(rpg, path).unwrap_or_else(|e| e),
            None => "Error: expand_leaf_node_info(feature_path) takes one string.".to_string(),
        },
        "search_interface_by_functionality" => match call.args.first().and_then(&str_list) {
            Some(keywords) if !keywords.is_empty() => {
                search_interface_by_functionality(ws, index, &keywords)
                    .unwrap_or_else(|e| e)
            }
            _ => "Error: search_interface_by_functionality(keywords) takes a list of strings."
                .to_string(),
        },
        other => format!("Error: unknown tool {other}."),
    }
}

/// Runs a bounded localization session: the oracle issues tool calls, the
/// tools answer as observations, and Terminate (or the step cap) ends it.
pub fn run_localization(
    oracle: &Oracle,
    ws: &Workspace,
    rpg: &Rpg,
    task: &str,
    max_steps: usize,
) -> Result<LocalizationResult, OracleError> {
    let index = InterfaceIndex::build(ws, rpg);
    let graph_summary = rpg.render_summary();
    let mut history = String::new();
    let mut trace: Vec<String> = Vec::new();

    for step in 1..=max_steps {
        let bindings = SlotBindings::new()
            .set("task", task)
            .set("graph_summary", graph_summary.as_str())
            .set("history", if history.is_empty() { "(none)" } else { history.as_str() })
            .set("step", step.to_string())
            .set("max_steps", max_steps.to_string());
        let blocks = oracle.exchange("localize", &bindings)?;
        let text = blocks.payload.as_text().unwrap_or_default().to_string();

        let calls = wire::scan_tool_calls(&text);
        let mut observations: Vec<String> = Vec::new();
        if calls.is_empty() {
            observations.push("Error: no tool call found in response.".to_string());
        }
        for (snippet, parsed) in calls {
            trace.push(snippet.clone());
            match parsed {
                Err(e) => observations.push(format!("Error: malformed tool call: {e}")),
                Ok(call) if call.name == "Terminate" => match parse_terminate(&call) {
                    Ok(mut entries) => {
                        entries.truncate(5);
                        return Ok(LocalizationResult {
                            entries,
                            steps: step,
                            flag: None,
                            trace,
                        });
                    }
                    Err(msg) => observations.push(msg),
                },
                Ok(call) => observations.push(dispatch_tool(ws, rpg, &index, &call)),
            }
        }
        history.push_str(&format!(
            "Step {step}:\n{}\nEnv: {}\n\n",
            text.trim(),
            observations.join("\n")
        ));
    }

    Ok(LocalizationResult {
        entries: Vec::new(),
        steps: max_steps,
        flag: Some("unterminated".to_string()),
        trace,
    })
}
