//! Environment abstraction: a visible workspace plus compile/simulate/verify
//! semantics. The hidden verifier is only reachable through
//! [`TaskEnvironment::verify`], which never mutates the live workspace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{FileEntry, Task};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment handle {0}")]
    UnknownHandle(String),
    #[error("malformed scenario: {0}")]
    MalformedScenario(String),
    #[error("workspace error: {0}")]
    Workspace(String),
}

/// The agent-visible file tree for one rollout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Workspace {
    files: BTreeMap<String, String>,
}

impl Workspace {
    pub fn from_entries(entries: &[FileEntry]) -> Self {
        Self {
            files: entries.iter().map(|e| (e.path.clone(), e.content.clone())).collect(),
        }
    }

    pub fn paths(&self) -> Vec<String> {
        self.files.keys().cloned().collect()
    }

    pub fn read(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }

    pub fn write(&mut self, path: &str, content: &str) {
        self.files.insert(path.to_string(), content.to_string());
    }

    /// Replaces `from` with `to` inside an existing file.
    pub fn edit(&mut self, path: &str, from: &str, to: &str) -> Result<(), EnvError> {
        let content = self
            .files
            .get(path)
            .ok_or_else(|| EnvError::Workspace(format!("no such file {path}")))?;
        if !content.contains(from) {
            return Err(EnvError::Workspace(format!("pattern not found in {path}")));
        }
        let updated = content.replacen(from, to, 1);
        self.files.insert(path.to_string(), updated);
        Ok(())
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    /// Content digest over all files, used for the feedback no-change rule.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (path, content) in &self.files {
            hasher.update(path.as_bytes());
            hasher.update([0]);
            hasher.update(content.as_bytes());
            hasher.update([0]);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Case-insensitive substring search across all files.
    pub fn search(&self, pattern: &str) -> Vec<(String, usize)> {
        let needle = pattern.to_lowercase();
        let mut hits = Vec::new();
        for (path, content) in &self.files {
            let count = content.to_lowercase().matches(&needle).count();
            if count > 0 {
                hits.push((path.clone(), count));
            }
        }
        hits
    }
}

/// Result of a visible compile or simulate invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolReport {
    pub success: bool,
    pub summary: String,
}

/// Unsanitized verifier output. Only the feedback gateway and the final
/// verification path may consume this; it can name hidden artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawVerifierBundle {
    pub exit_code: i32,
    pub log: String,
}

/// One task's verifier-capable environment. Implementations must be
/// deterministic functions of workspace content.
pub trait TaskEnvironment: Send + Sync {
    fn initial_workspace(&self) -> Workspace;
    fn compile(&self, workspace: &Workspace) -> ToolReport;
    fn simulate(&self, workspace: &Workspace) -> ToolReport;
    /// Runs the hidden verifier against a snapshot of the workspace.
    fn verify(&self, workspace: &Workspace) -> RawVerifierBundle;
    /// Identifiers the agent must never see (harness files, reference
    /// solutions, container configuration).
    fn hidden_identifiers(&self) -> Vec<String>;
}

/// Resolves a task's opaque environment handle into an environment.
pub trait EnvironmentProvider: Send + Sync {
    fn create(&self, task: &Task) -> Result<Box<dyn TaskEnvironment>, EnvError>;
}
