//! Skeleton emission: materializes an implementation plan as a directory
//! tree of Python stub files, package markers, and a manifest.
//!
//! Emission is a pure function of the plan, so re-running it over the same
//! plan yields a byte-identical tree.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::design::{DesignPlan, InterfaceSpec};
use crate::graph::InterfaceKind;
use crate::workspace::{Workspace, WorkspaceError};

pub const MANIFEST_FILE: &str = "skeleton_manifest.json";

const TYPING_NAMES: &[&str] = &[
    "Any", "Callable", "Dict", "Iterable", "Iterator", "List", "Mapping", "Optional",
    "Sequence", "Set", "Tuple", "Union",
];

#[derive(Debug, thiserror::Error)]
pub enum SkeletonError {
    #[error("path {path} emitted twice: {first} and {second}")]
    Collision { path: String, first: String, second: String },
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

/// One manifest row: a file, the features it carries, and the interfaces
/// stubbed into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub features: Vec<String>,
    pub interfaces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SkeletonManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Writes the plan's folders, stub files, package markers, and manifest
/// into the workspace. Returns the manifest that was written.
pub fn emit_skeleton(
    ws: &Workspace,
    plan: &DesignPlan,
) -> Result<SkeletonManifest, SkeletonError> {
    let mut outputs: BTreeMap<String, (String, &'static str)> = BTreeMap::new();
    let claim = |path: &str,
                     content: String,
                     source: &'static str,
                     outputs: &mut BTreeMap<String, (String, &'static str)>|
     -> Result<(), SkeletonError> {
        if let Some((_, first)) = outputs.get(path) {
            return Err(SkeletonError::Collision {
                path: path.to_string(),
                first: first.to_string(),
                second: source.to_string(),
            });
        }
        outputs.insert(path.to_string(), (content, source));
        Ok(())
    };

    for (file, source) in &plan.bases.file_sources {
        claim(file, source.clone(), "base abstraction file", &mut outputs)?;
    }

    let mut specs_by_file: BTreeMap<&str, Vec<&InterfaceSpec>> = BTreeMap::new();
    for spec in &plan.interfaces {
        specs_by_file.entry(spec.file.as_str()).or_default().push(spec);
    }
    let base_files: BTreeMap<&str, &str> = plan
        .bases
        .abstractions
        .iter()
        .map(|b| (b.name.as_str(), b.file.as_str()))
        .collect();
    for (file, specs) in &specs_by_file {
        let content = render_stub_file(specs, &base_files);
        claim(file, content, "interface stub file", &mut outputs)?;
    }

    for extra in &plan.folders.extra_files {
        claim(extra, String::new(), "extra file", &mut outputs)?;
    }

    let mut manifest = SkeletonManifest::default();
    for (file, (_, source)) in &outputs {
        let features = plan
            .files
            .files
            .get(file)
            .map(|set| set.iter().map(|f| f.to_string()).collect())
            .unwrap_or_default();
        let interfaces = match *source {
            "interface stub file" => specs_by_file
                .get(file.as_str())
                .map(|specs| {
                    specs.iter().map(|s| format!("{}: {}", s.kind, s.name)).collect()
                })
                .unwrap_or_default(),
            "base abstraction file" => plan
                .bases
                .abstractions
                .iter()
                .filter(|b| b.file == *file)
                .map(|b| format!("class: {}", b.name))
                .collect(),
            _ => Vec::new(),
        };
        manifest.entries.push(ManifestEntry { file: file.clone(), features, interfaces });
    }

    let mut package_dirs: BTreeSet<String> = BTreeSet::new();
    for path in outputs.keys() {
        if !path.ends_with(".py") {
            continue;
        }
        let mut parent = path.as_str();
        while let Some(idx) = parent.rfind('/') {
            parent = &parent[..idx];
            package_dirs.insert(parent.to_string());
        }
    }
    for dir in &package_dirs {
        let marker = format!("{dir}/__init__.py");
        if !outputs.contains_key(&marker) {
            outputs.insert(marker, (String::new(), "package marker"));
        }
    }

    for dir in &plan.folders.folders {
        ws.create_dir(dir)?;
    }
    for (path, (content, _)) in &outputs {
        ws.write(path, content)?;
    }
    let rendered = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    ws.write(MANIFEST_FILE, &format!("{rendered}\n"))?;
    Ok(manifest)
}

/// Renders one stub file: typing and base-class imports, then each
/// interface's stub source, separated by two blank lines.
pub fn render_stub_file(
    specs: &[&InterfaceSpec],
    base_files: &BTreeMap<&str, &str>,
) -> String {
    let mut typing_needed: BTreeSet<&str> = BTreeSet::new();
    let mut base_imports: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for spec in specs {
        let mut signatures = vec![spec.signature.as_str()];
        signatures.extend(spec.methods.iter().map(|m| m.signature.as_str()));
        for sig in signatures {
            for token in identifier_tokens(sig) {
                if let Some(name) = TYPING_NAMES.iter().find(|n| **n == token) {
                    typing_needed.insert(name);
                }
            }
        }
        if spec.kind == InterfaceKind::Class {
            for base in class_bases(&spec.signature) {
                if let Some(file) = base_files.get(base.as_str()) {
                    let module = module_path(file);
                    base_imports.entry(module).or_default().insert(base);
                }
            }
        }
    }

    let mut import_lines: Vec<String> = Vec::new();
    if !typing_needed.is_empty() {
        import_lines.push(format!(
            "from typing import {}",
            typing_needed.iter().copied().collect::<Vec<_>>().join(", ")
        ));
    }
    if !base_imports.is_empty() {
        if !import_lines.is_empty() {
            import_lines.push(String::new());
        }
        for (module, names) in &base_imports {
            import_lines.push(format!(
                "from {module} import {}",
                names.iter().cloned().collect::<Vec<_>>().join(", ")
            ));
        }
    }

    let stubs: Vec<&str> = specs.iter().map(|s| s.stub_source.as_str()).collect();
    let mut out = String::new();
    if !import_lines.is_empty() {
        out.push_str(&import_lines.join("\n"));
        out.push_str("\n\n\n");
    }
    out.push_str(&stubs.join("\n\n\n"));
    out.push('\n');
    out
}

fn identifier_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Base names out of a class signature like `Name(Base1, Base2)`.
fn class_bases(signature: &str) -> Vec<String> {
    let Some(open) = signature.find('(') else { return Vec::new() };
    let Some(close) = signature.rfind(')') else { return Vec::new() };
    if close <= open {
        return Vec::new();
    }
    signature[open + 1..close]
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Dotted module path of a source file: `src/common/base.py` becomes
/// `src.common.base`.
pub fn module_path(file: &str) -> String {
    file.trim_end_matches(".py").replace('/', ".")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{
        BaseAbstraction, BaseClasses, BaseKind, DesignPlan, FilePlan, FolderPlan, MethodSpec,
    };
    use crate::graph::InterfaceKind;
    use crate::ontology::FeaturePath;

    fn temp_workspace() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        (dir, ws)
    }

    fn feature(path: &str) -> FeaturePath {
        path.parse().unwrap()
    }

    fn function_spec(file: &str, name: &str, signature: &str, feat: &str) -> InterfaceSpec {
        InterfaceSpec {
            kind: InterfaceKind::Function,
            name: name.to_string(),
            signature: signature.to_string(),
            doc: "Does a thing.\n\nReturns:\n    x.\n\nRaises:\n    ValueError: bad.".to_string(),
            feature_paths: BTreeSet::from([feature(feat)]),
            file: file.to_string(),
            base_link: None,
            methods: Vec::new(),
            stub_source: format!(
                "def {signature_line}:\n    \"\"\"Does a thing.\n\n    Returns:\n        x.\n\n    Raises:\n        ValueError: bad.\n    \"\"\"\n    raise NotImplementedError",
                signature_line = signature
            ),
        }
    }

    fn fixture_plan() -> DesignPlan {
        let mut folders = FolderPlan::default();
        folders.folders.extend([
            "src".to_string(),
            "src/common".to_string(),
            "src/data_loading".to_string(),
            "src/models".to_string(),
            "docs".to_string(),
        ]);
        folders.extra_files.insert("README.md".to_string());

        let mut files = FilePlan::default();
        files
            .files
            .entry("src/data_loading/loader.py".to_string())
            .or_default()
            .insert(feature("Data Loading/csv loading"));
        files
            .files
            .entry("src/models/linear.py".to_string())
            .or_default()
            .insert(feature("Models/linear regression"));

        let base = BaseAbstraction {
            kind: BaseKind::FunctionalBaseClass,
            name: "EstimatorComponent".to_string(),
            file: "src/common/base.py".to_string(),
            rationale: "Shared estimator lifecycle.".to_string(),
            contract: "class EstimatorComponent:\n    \"\"\"Shared estimator lifecycle.\"\"\"\n\n    def fit(self, features, targets):\n        pass".to_string(),
        };
        let bases = BaseClasses {
            abstractions: vec![base],
            file_sources: BTreeMap::from([(
                "src/common/base.py".to_string(),
                "class EstimatorComponent:\n    \"\"\"Shared estimator lifecycle.\"\"\"\n\n    def fit(self, features, targets):\n        pass\n".to_string(),
            )]),
            warnings: Vec::new(),
        };

        let loader =
            function_spec("src/data_loading/loader.py", "load_csv", "load_csv(path: str) -> list", "Data Loading/csv loading");
        let linear = InterfaceSpec {
            kind: InterfaceKind::Class,
            name: "LinearModel".to_string(),
            signature: "LinearModel(EstimatorComponent)".to_string(),
            doc: "Least squares.\n\nReturns:\n    x.\n\nRaises:\n    ValueError: bad.".to_string(),
            feature_paths: BTreeSet::from([feature("Models/linear regression")]),
            file: "src/models/linear.py".to_string(),
            base_link: Some("EstimatorComponent".to_string()),
            methods: vec![MethodSpec {
                name: "fit".to_string(),
                signature: "fit(self, features: List[float], targets: Optional[list]) -> Any"
                    .to_string(),
                doc: "Fits.".to_string(),
            }],
            stub_source: "class LinearModel(EstimatorComponent):\n    \"\"\"Least squares.\"\"\"\n\n    def fit(self, features: List[float], targets: Optional[list]) -> Any:\n        \"\"\"Fits.\"\"\"\n        raise NotImplementedError".to_string(),
        };

        DesignPlan {
            folders,
            files,
            flows: Default::default(),
            bases,
            interfaces: vec![loader, linear],
            warnings: Vec::new(),
        }
    }

    #[test]
    fn empty_plan_emits_only_the_manifest() {
        let (_dir, ws) = temp_workspace();
        let manifest = emit_skeleton(&ws, &DesignPlan::default()).unwrap();
        assert!(manifest.entries.is_empty());
        assert_eq!(ws.list_files().unwrap(), vec![MANIFEST_FILE.to_string()]);
        let text = ws.read(MANIFEST_FILE).unwrap();
        assert!(text.ends_with('\n'));
        assert!(text.contains("\"entries\": []"));
    }

    #[test]
    fn fixture_plan_emits_stubs_markers_and_extras() {
        let (_dir, ws) = temp_workspace();
        let manifest = emit_skeleton(&ws, &fixture_plan()).unwrap();

        let files = ws.list_files().unwrap();
        assert!(files.contains(&"src/__init__.py".to_string()));
        assert!(files.contains(&"src/common/__init__.py".to_string()));
        assert!(files.contains(&"src/data_loading/__init__.py".to_string()));
        assert!(files.contains(&"src/models/__init__.py".to_string()));
        assert!(!files.contains(&"docs/__init__.py".to_string()));
        assert!(!files.contains(&"__init__.py".to_string()));
        assert_eq!(ws.read("README.md").unwrap(), "");

        let base = ws.read("src/common/base.py").unwrap();
        assert!(base.starts_with("class EstimatorComponent:"));

        let linear = ws.read("src/models/linear.py").unwrap();
        assert!(
            linear.starts_with("from typing import Any, List, Optional\n\nfrom src.common.base import EstimatorComponent\n\n\nclass LinearModel(EstimatorComponent):"),
            "got:\n{linear}"
        );
        assert!(linear.contains("raise NotImplementedError"));
        assert!(linear.ends_with('\n'));

        let loader = ws.read("src/data_loading/loader.py").unwrap();
        assert!(loader.starts_with("def load_csv(path: str) -> list:"), "got:\n{loader}");

        let entry = manifest
            .entries
            .iter()
            .find(|e| e.file == "src/models/linear.py")
            .unwrap();
        assert_eq!(entry.features, vec!["Models/linear regression"]);
        assert_eq!(entry.interfaces, vec!["class: LinearModel"]);
        let base_entry = manifest
            .entries
            .iter()
            .find(|e| e.file == "src/common/base.py")
            .unwrap();
        assert!(base_entry.features.is_empty());
        assert_eq!(base_entry.interfaces, vec!["class: EstimatorComponent"]);
        let files_in_manifest: Vec<&str> =
            manifest.entries.iter().map(|e| e.file.as_str()).collect();
        let mut sorted = files_in_manifest.clone();
        sorted.sort();
        assert_eq!(files_in_manifest, sorted);
    }

    #[test]
    fn emission_is_deterministic_across_runs_and_directories() {
        let plan = fixture_plan();
        let (_d1, ws1) = temp_workspace();
        let (_d2, ws2) = temp_workspace();
        emit_skeleton(&ws1, &plan).unwrap();
        emit_skeleton(&ws2, &plan).unwrap();
        assert_eq!(ws1.tree_digest().unwrap(), ws2.tree_digest().unwrap());

        let before = ws1.tree_digest().unwrap();
        emit_skeleton(&ws1, &plan).unwrap();
        assert_eq!(ws1.tree_digest().unwrap(), before);
    }

    #[test]
    fn path_claimed_twice_is_a_collision_error() {
        let mut plan = fixture_plan();
        plan.folders.extra_files.insert("src/models/linear.py".to_string());
        let (_dir, ws) = temp_workspace();
        match emit_skeleton(&ws, &plan) {
            Err(SkeletonError::Collision { path, first, second }) => {
                assert_eq!(path, "src/models/linear.py");
                assert_ne!(first, second);
            }
            other => panic!("expected Collision, got {other:?}"),
        }
    }

    #[test]
    fn twenty_interface_emission_is_byte_identical_on_reemission() {
        let mut plan = DesignPlan::default();
        plan.folders.folders.insert("src".to_string());
        for i in 0..20 {
            let file = format!("src/mod_{}.py", i % 5);
            let name = format!("func_{i}");
            let feat = format!("Root/feature {i}");
            plan.files.files.entry(file.clone()).or_default().insert(feature(&feat));
            plan.interfaces.push(function_spec(
                &file,
                &name,
                &format!("{name}(value: Dict[str, Any]) -> Tuple[int, int]"),
                &feat,
            ));
        }
        let (_dir, ws) = temp_workspace();
        emit_skeleton(&ws, &plan).unwrap();
        let first: BTreeMap<String, String> = ws
            .list_files()
            .unwrap()
            .into_iter()
            .map(|f| {
                let content = ws.read(&f).unwrap();
                (f, content)
            })
            .collect();
        emit_skeleton(&ws, &plan).unwrap();
        for (file, content) in &first {
            assert_eq!(&ws.read(file).unwrap(), content, "{file} changed");
        }
        assert_eq!(first.len(), 5 + 1 + 1);
        let sample = ws.read("src/mod_0.py").unwrap();
        assert!(sample.starts_with("from typing import Any, Dict, Tuple\n\n\ndef func_0"));
    }
}
