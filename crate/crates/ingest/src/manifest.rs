//! JSON Lines dataset manifests.
//!
//! Line 1 is a header object with the role, creation time and query terms;
//! every further line is one recording. Entries are kept sorted by
//! recording id so identical inputs give identical bytes.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "TRAIN",
            Role::Test => "TEST",
        })
    }
}

impl FromStr for Role {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "TRAIN" => Ok(Role::Train),
            "TEST" => Ok(Role::Test),
            _ => Err(IngestError::InvalidArgument(format!("unknown role {s:?}"))),
        }
    }
}

/// Filters a manifest was produced with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryTerms {
    pub species: Vec<String>,
    /// Required quality letter, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<String>,
    /// `true` when recordings must list no background species.
    #[serde(default)]
    pub no_background: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: String,
    /// Binomial name, which doubles as the class label.
    pub species: String,
    #[serde(default)]
    pub quality: String,
    #[serde(default)]
    pub background_species: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_url: Option<String>,
    /// Downloaded original, possibly compressed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_path: Option<String>,
    /// WAV file the pipeline reads. For archive downloads this is the
    /// expected output of the external conversion step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    /// Last download failure, cleared on success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RecordingMeta {
    /// Whether this entry satisfies `terms`.
    pub fn satisfies(&self, terms: &QueryTerms) -> bool {
        let quality_ok = terms.quality.as_ref().is_none_or(|q| self.quality.eq_ignore_ascii_case(q));
        let background_ok = !terms.no_background || self.background_species.is_empty();
        let species_ok = terms.species.is_empty() || terms.species.contains(&self.species);
        quality_ok && background_ok && species_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    role: Role,
    created_at: String,
    query_terms: QueryTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub role: Role,
    /// RFC 3339 timestamp supplied by the caller.
    pub created_at: String,
    pub query_terms: QueryTerms,
    entries: Vec<RecordingMeta>,
}

/// Numeric ids in numeric order first, then everything else lexically.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl Manifest {
    /// Entries are sorted; a repeated recording id is an error.
    pub fn new(
        role: Role,
        created_at: impl Into<String>,
        query_terms: QueryTerms,
        mut entries: Vec<RecordingMeta>,
    ) -> Result<Self, IngestError> {
        entries.sort_by(|a, b| compare_ids(&a.recording_id, &b.recording_id));
        if let Some(w) = entries.windows(2).find(|w| w[0].recording_id == w[1].recording_id) {
            return Err(IngestError::DuplicateRecording(w[0].recording_id.clone()));
        }
        Ok(Self {
            role,
            created_at: created_at.into(),
            query_terms,
            entries,
        })
    }

    pub fn entries(&self) -> &[RecordingMeta] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [RecordingMeta] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries violating the recorded query terms.
    pub fn violations(&self) -> Vec<&RecordingMeta> {
        self.entries.iter().filter(|e| !e.satisfies(&self.query_terms)).collect()
    }

    /// Distinct species in sorted order.
    pub fn species(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.entries.iter().map(|e| e.species.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), IngestError> {
        let header = Header {
            role: self.role,
            created_at: self.created_at.clone(),
            query_terms: self.query_terms.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| IngestError::Manifest { line: 1, msg: e.to_string() })?;
        out.write_all(b"\n")?;
        for (i, e) in self.entries.iter().enumerate() {
            serde_json::to_writer(&mut out, e).map_err(|err| IngestError::Manifest { line: i + 2, msg: err.to_string() })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, IngestError> {
        let mut header: Option<Header> = None;
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| IngestError::Manifest { line: i + 1, msg: e.to_string() };
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(bad)?);
            } else {
                entries.push(serde_json::from_str(&line).map_err(bad)?);
            }
        }
        let h = header.ok_or(IngestError::Manifest { line: 1, msg: "missing header line".into() })?;
        Self::new(h.role, h.created_at, h.query_terms, entries)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, IngestError> {
        let f = std::fs::File::open(path).map_err(|e| IngestError::io_at(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), IngestError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| IngestError::io_at(path, e))
    }
}
