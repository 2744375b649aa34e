use std::path::{Path, PathBuf};

use crate::skill_model::LibraryViolation;

/// Errors raised while reading or writing a skill library.
#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("no library at {0}")]
    NoLibrary(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error at byte {byte_offset}: {message}")]
    Parse { path: PathBuf, line: usize, byte_offset: usize, message: String },
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: manifest lists {expected} entries, file holds {found}")]
    CountMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("library invariant violated: {}", render(.0))]
    Invariant(Vec<LibraryViolation>),
    #[error("refusing to commit version {attempted} over head version {head}")]
    VersionRegression { head: u64, attempted: u64 },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("encode: {0}")]
    Encode(String),
}

impl LibraryError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LibraryError::Io { path: path.to_path_buf(), source }
    }
}

fn render(violations: &[LibraryViolation]) -> String {
    let shown: Vec<String> = violations.iter().take(5).map(ToString::to_string).collect();
    let mut s = shown.join("; ");
    if violations.len() > 5 {
        s.push_str(&format!(" (+{} more)", violations.len() - 5));
    }
    s
}
