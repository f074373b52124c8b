//! File formats, configuration, and run orchestration around `pier-core`:
//! JSONL corpora, binary checkpoints, canonical JSON reports, and the
//! gen/train/eval/ablate pipeline the CLI exposes.

pub mod canonical;
pub mod checkpoint;
pub mod config;
pub mod jsonl;
pub mod run;

use std::path::Path;

/// Errors for every on-disk format this crate owns.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed JSON: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Field {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: format version {found}, this build reads version {expected}")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn json(path: &Path, line: usize, source: serde_json::Error) -> Self {
        FormatError::Json {
            path: path.display().to_string(),
            line,
            source,
        }
    }
}
