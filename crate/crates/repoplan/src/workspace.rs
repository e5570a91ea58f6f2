//! Workspace: the on-disk repository being generated, plus the shadow
//! overlay that buffers edits until a leaf's tests pass.
//!
//! All paths are repository-relative with forward slashes. Edits never
//! touch disk directly: they accumulate in a [`Shadow`], and `commit`
//! verifies that the base files still match the digests captured when the
//! shadow first read them, so concurrent tampering surfaces as a conflict
//! instead of silent corruption.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("path {0} escapes the workspace root")]
    Escapes(String),
    #[error("commit conflict: {path} changed on disk (expected digest {expected}, found {found})")]
    Conflict { path: String, expected: String, found: String },
}

/// Hex SHA-256 of a text, the digest used for patch bookkeeping.
pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A rooted directory tree holding the generated repository.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve(&self, rel: &str) -> Result<PathBuf, WorkspaceError> {
        let p = Path::new(rel);
        if p.is_absolute()
            || p.components().any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return Err(WorkspaceError::Escapes(rel.to_string()));
        }
        Ok(self.root.join(p))
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.resolve(rel).map(|p| p.is_file()).unwrap_or(false)
    }

    pub fn read(&self, rel: &str) -> Result<String, WorkspaceError> {
        let path = self.resolve(rel)?;
        std::fs::read_to_string(&path)
            .map_err(|source| WorkspaceError::Io { path: rel.to_string(), source })
    }

    pub fn write(&self, rel: &str, content: &str) -> Result<(), WorkspaceError> {
        let path = self.resolve(rel)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|source| WorkspaceError::Io { path: rel.to_string(), source })?;
        }
        std::fs::write(&path, content)
            .map_err(|source| WorkspaceError::Io { path: rel.to_string(), source })
    }

    pub fn create_dir(&self, rel: &str) -> Result<(), WorkspaceError> {
        let path = self.resolve(rel)?;
        std::fs::create_dir_all(&path)
            .map_err(|source| WorkspaceError::Io { path: rel.to_string(), source })
    }

    pub fn remove(&self, rel: &str) -> Result<(), WorkspaceError> {
        let path = self.resolve(rel)?;
        std::fs::remove_file(&path)
            .map_err(|source| WorkspaceError::Io { path: rel.to_string(), source })
    }

    /// All files under the root, repo-relative, sorted.
    pub fn list_files(&self) -> Result<Vec<String>, WorkspaceError> {
        let mut out = Vec::new();
        if !self.root.exists() {
            return Ok(out);
        }
        for entry in walkdir::WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| WorkspaceError::Io {
                path: self.root.display().to_string(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() {
                let rel = entry
                    .path()
                    .strip_prefix(&self.root)
                    .expect("walkdir stays under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push(rel);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Digest of one file's content.
    pub fn file_digest(&self, rel: &str) -> Result<String, WorkspaceError> {
        Ok(sha256_hex(&self.read(rel)?))
    }

    /// Deterministic digest over the whole tree: sorted (path, digest)
    /// pairs hashed together. Two byte-identical trees agree.
    pub fn tree_digest(&self) -> Result<String, WorkspaceError> {
        let mut hasher = Sha256::new();
        for rel in self.list_files()? {
            hasher.update(rel.as_bytes());
            hasher.update([0u8]);
            hasher.update(self.file_digest(&rel)?.as_bytes());
            hasher.update([0u8]);
        }
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Opens a shadow overlay for buffered edits.
    pub fn shadow(&self) -> Shadow<'_> {
        Shadow { base: self, overlay: BTreeMap::new(), base_digests: BTreeMap::new() }
    }
}

/// Buffered edits over a workspace. Reads see the overlay first; writes
/// only touch the overlay until [`Shadow::commit`].
pub struct Shadow<'a> {
    base: &'a Workspace,
    overlay: BTreeMap<String, String>,
    base_digests: BTreeMap<String, Option<String>>,
}

impl<'a> Shadow<'a> {
    pub fn exists(&self, rel: &str) -> bool {
        self.overlay.contains_key(rel) || self.base.exists(rel)
    }

    pub fn read(&mut self, rel: &str) -> Result<String, WorkspaceError> {
        if let Some(text) = self.overlay.get(rel) {
            return Ok(text.clone());
        }
        let text = self.base.read(rel)?;
        self.base_digests.entry(rel.to_string()).or_insert_with(|| Some(sha256_hex(&text)));
        Ok(text)
    }

    pub fn write(&mut self, rel: &str, content: &str) -> Result<(), WorkspaceError> {
        self.base_digests.entry(rel.to_string()).or_insert_with(|| {
            self.base.read(rel).ok().map(|t| sha256_hex(&t))
        });
        self.overlay.insert(rel.to_string(), content.to_string());
        Ok(())
    }

    /// Paths with buffered changes, in sorted order.
    pub fn dirty_paths(&self) -> Vec<String> {
        self.overlay.keys().cloned().collect()
    }

    pub fn is_dirty(&self) -> bool {
        !self.overlay.is_empty()
    }

    /// Discards all buffered edits.
    pub fn rollback(&mut self) {
        self.overlay.clear();
    }

    /// Writes every buffered edit to disk after verifying the base files
    /// still match the digests captured when the shadow touched them.
    pub fn commit(&mut self) -> Result<Vec<String>, WorkspaceError> {
        for (rel, snapshot) in &self.base_digests {
            if !self.overlay.contains_key(rel) {
                continue;
            }
            let current = self.base.read(rel).ok().map(|t| sha256_hex(&t));
            if current != *snapshot {
                return Err(WorkspaceError::Conflict {
                    path: rel.clone(),
                    expected: snapshot.clone().unwrap_or_else(|| "<absent>".into()),
                    found: current.unwrap_or_else(|| "<absent>".into()),
                });
            }
        }
        let committed: Vec<String> = self.overlay.keys().cloned().collect();
        for (rel, content) in std::mem::take(&mut self.overlay) {
            self.base.write(&rel, &content)?;
        }
        self.base_digests.clear();
        Ok(committed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_workspace() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        (dir, ws)
    }

    #[test]
    fn write_read_list_round_trip() {
        let (_dir, ws) = temp_workspace();
        ws.write("src/a.py", "x = 1\n").unwrap();
        ws.write("src/pkg/b.py", "y = 2\n").unwrap();
        assert_eq!(ws.read("src/a.py").unwrap(), "x = 1\n");
        assert_eq!(ws.list_files().unwrap(), vec!["src/a.py", "src/pkg/b.py"]);
    }

    #[test]
    fn escaping_paths_rejected() {
        let (_dir, ws) = temp_workspace();
        assert!(matches!(ws.write("../evil.py", "x"), Err(WorkspaceError::Escapes(_))));
        assert!(matches!(ws.read("/etc/passwd"), Err(WorkspaceError::Escapes(_))));
    }

    #[test]
    fn shadow_reads_overlay_before_base() {
        let (_dir, ws) = temp_workspace();
        ws.write("a.py", "base\n").unwrap();
        let mut shadow = ws.shadow();
        assert_eq!(shadow.read("a.py").unwrap(), "base\n");
        shadow.write("a.py", "edited\n").unwrap();
        assert_eq!(shadow.read("a.py").unwrap(), "edited\n");
        assert_eq!(ws.read("a.py").unwrap(), "base\n");
    }

    #[test]
    fn rollback_restores_pre_iteration_state() {
        let (_dir, ws) = temp_workspace();
        ws.write("a.py", "base\n").unwrap();
        let before = ws.tree_digest().unwrap();
        let mut shadow = ws.shadow();
        shadow.write("a.py", "broken\n").unwrap();
        shadow.write("b.py", "new\n").unwrap();
        shadow.rollback();
        assert!(!shadow.is_dirty());
        assert_eq!(ws.tree_digest().unwrap(), before);
    }

    #[test]
    fn commit_writes_all_buffered_files() {
        let (_dir, ws) = temp_workspace();
        ws.write("a.py", "base\n").unwrap();
        let mut shadow = ws.shadow();
        let txt = shadow.read("a.py").unwrap();
        shadow.write("a.py", &format!("{txt}more\n")).unwrap();
        shadow.write("fresh.py", "f\n").unwrap();
        let committed = shadow.commit().unwrap();
        assert_eq!(committed, vec!["a.py", "fresh.py"]);
        assert_eq!(ws.read("a.py").unwrap(), "base\nmore\n");
        assert_eq!(ws.read("fresh.py").unwrap(), "f\n");
        assert!(!shadow.is_dirty());
    }

    #[test]
    fn commit_detects_concurrent_modification() {
        let (_dir, ws) = temp_workspace();
        ws.write("a.py", "base\n").unwrap();
        let mut shadow = ws.shadow();
        let _ = shadow.read("a.py").unwrap();
        shadow.write("a.py", "edited\n").unwrap();
        ws.write("a.py", "tampered\n").unwrap();
        match shadow.commit() {
            Err(WorkspaceError::Conflict { path, .. }) => assert_eq!(path, "a.py"),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn tree_digest_is_order_independent_and_content_sensitive() {
        let (_d1, w1) = temp_workspace();
        let (_d2, w2) = temp_workspace();
        w1.write("a.py", "1\n").unwrap();
        w1.write("b.py", "2\n").unwrap();
        w2.write("b.py", "2\n").unwrap();
        w2.write("a.py", "1\n").unwrap();
        assert_eq!(w1.tree_digest().unwrap(), w2.tree_digest().unwrap());
        w2.write("a.py", "changed\n").unwrap();
        assert_ne!(w1.tree_digest().unwrap(), w2.tree_digest().unwrap());
    }
}
