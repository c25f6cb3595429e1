//! Task files: JSON documents describing a reproducible one-shot run.
//!
//! ```json
//! {
//!   "task": "What was ARR in Q1 2014?",
//!   "attachments": [{ "name": "financial_report.pdf", "path": "financial_report.txt" }],
//!   "script": "golden.script",
//!   "builtin_tools": ["documents"],
//!   "max_turns": 10
//! }
//! ```
//!
//! Attachment files are text with pages separated by form feeds. An entry
//! may be a bare path, in which case the file name is the attachment name.
//! Relative paths resolve against the task file's directory.

use std::path::{Path, PathBuf};

use reactor_core::Script;
use serde::{Deserialize, Serialize};

use crate::config::{BackendSelection, BuiltinTools};
use crate::engine::{split_pages, AttachmentUpload, TaskSubmission};

#[derive(Debug, thiserror::Error)]
pub enum TaskFileError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttachmentRef {
    Path(PathBuf),
    Named { name: String, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub task: String,
    #[serde(default)]
    pub attachments: Vec<AttachmentRef>,
    /// Script file for a scripted backend.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub backend: Option<BackendSelection>,
    /// Tool sets a local run mounts; a server must already provide them.
    #[serde(default)]
    pub builtin_tools: Vec<BuiltinTools>,
    #[serde(default)]
    pub max_turns: Option<u32>,
    #[serde(skip)]
    base: PathBuf,
}

fn read(path: &Path) -> Result<String, TaskFileError> {
    std::fs::read_to_string(path).map_err(|source| TaskFileError::Io { path: path.into(), source })
}

impl TaskFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaskFileError> {
        let path = path.as_ref();
        let mut file: TaskFile =
            serde_json::from_str(&read(path)?).map_err(|source| TaskFileError::Parse { path: path.into(), source })?;
        file.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if file.script.is_some() && file.backend.is_some() {
            return Err(TaskFileError::Invalid("give either `script` or `backend`, not both".into()));
        }
        Ok(file)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_relative() {
            self.base.join(path)
        } else {
            path.to_path_buf()
        }
    }

    /// Reads attachments and the script from disk.
    pub fn to_submission(&self) -> Result<TaskSubmission, TaskFileError> {
        let attachments = self
            .attachments
            .iter()
            .map(|a| {
                let (name, path) = match a {
                    AttachmentRef::Path(path) => {
                        let name = path
                            .file_name()
                            .map(|n| n.to_string_lossy().into_owned())
                            .ok_or_else(|| TaskFileError::Invalid(format!("attachment path {} has no file name", path.display())))?;
                        (name, path)
                    }
                    AttachmentRef::Named { name, path } => (name.clone(), path),
                };
                let text = read(&self.resolve(path))?;
                Ok(AttachmentUpload::from_pages(name, split_pages(&text)))
            })
            .collect::<Result<Vec<_>, TaskFileError>>()?;
        let backend = match (&self.script, &self.backend) {
            (Some(script), _) => {
                let path = self.resolve(script);
                let text = read(&path)?;
                let script = Script::from_json(&text).map_err(|source| TaskFileError::Parse { path, source })?;
                Some(BackendSelection::Scripted { script })
            }
            (None, backend) => backend.clone(),
        };
        Ok(TaskSubmission { task: self.task.clone(), attachments, max_turns: self.max_turns, backend })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_relative_attachments_and_script() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("doc.txt"), "one\u{c}two").unwrap();
        std::fs::write(dir.path().join("s.json"), r#"[{"response": "Final Answer: x"}]"#).unwrap();
        let task = dir.path().join("t.task");
        std::fs::write(
            &task,
            r#"{"task": "t", "attachments": ["doc.txt", {"name": "n.pdf", "path": "doc.txt"}], "script": "s.json", "max_turns": 2}"#,
        )
        .unwrap();
        let sub = TaskFile::load(&task).unwrap().to_submission().unwrap();
        assert_eq!(sub.attachments[0], AttachmentUpload::from_pages("doc.txt", vec!["one".into(), "two".into()]));
        assert_eq!(sub.attachments[1].name, "n.pdf");
        assert_eq!(sub.max_turns, Some(2));
        match sub.backend {
            Some(BackendSelection::Scripted { script }) => assert_eq!(script.steps.len(), 1),
            other => panic!("unexpected backend {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_fields_and_double_backends() {
        let dir = tempfile::tempdir().unwrap();
        let task = dir.path().join("t.task");
        std::fs::write(&task, r#"{"task": "t", "colour": 1}"#).unwrap();
        assert!(matches!(TaskFile::load(&task), Err(TaskFileError::Parse { .. })));
        std::fs::write(&task, r#"{"task": "t", "script": "s", "backend": {"kind": "http"}}"#).unwrap();
        assert!(matches!(TaskFile::load(&task), Err(TaskFileError::Invalid(_))));
    }
}
