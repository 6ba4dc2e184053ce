//! Dataset acquisition: archive search with quality/background filtering,
//! audio download and reproducible JSONL manifests.

use std::collections::BTreeMap;
use std::path::Path;

pub mod archive;
pub mod fetch;
pub mod manifest;

pub use archive::{ArchiveClient, ArchiveConfig, FieldMap, QueryOutcome};
pub use fetch::{fetch_audio, FetchReport, Fetcher};
pub use manifest::{Manifest, QueryTerms, RecordingMeta, Role};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("network error: {0}")]
    Network(String),
    #[error("archive response schema changed: {0}")]
    SchemaChanged(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("duplicate recording id {0}")]
    DuplicateRecording(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{path}: {source}")]
    IoAt {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    pub(crate) fn io_at(path: &Path, source: std::io::Error) -> Self {
        IngestError::IoAt {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Species whose selected-frame count reaches `threshold`, in name order.
pub fn min_frames_filter(counts: &BTreeMap<String, usize>, threshold: usize) -> Vec<String> {
    counts
        .iter()
        .filter(|(_, &n)| n >= threshold)
        .map(|(s, _)| s.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts() -> BTreeMap<String, usize> {
        [
            ("Emberiza pusilla", 1830),
            ("Sylvia borin", 20000),
            ("Acrocephalus arundinaceus", 103581),
        ]
        .into_iter()
        .map(|(s, n)| (s.to_string(), n))
        .collect()
    }

    #[test]
    fn frame_threshold() {
        assert_eq!(min_frames_filter(&counts(), 0).len(), 3);
        assert_eq!(
            min_frames_filter(&counts(), 20000),
            ["Acrocephalus arundinaceus", "Sylvia borin"]
        );
        assert!(min_frames_filter(&counts(), 103582).is_empty());
    }
}
