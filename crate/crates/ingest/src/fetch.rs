//! Audio download with checksum sidecars.
//!
//! Each original is stored as `<id>.<ext>` next to `<id>.<ext>.sha256`
//! (sha256sum format). A file whose sidecar matches its contents is never
//! fetched again, so re-running after a partial failure only retries the
//! entries that are still missing. Conversion of compressed originals to
//! `<id>.wav` happens outside this crate.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::archive::{build_agent, RateLimiter};
use crate::manifest::{Manifest, RecordingMeta};
use crate::IngestError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchReport {
    pub downloaded: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub struct Fetcher {
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl Fetcher {
    pub fn new(min_interval: Duration, timeout: Duration) -> Self {
        Self {
            agent: build_agent(timeout),
            limiter: RateLimiter::new(min_interval),
        }
    }

    fn download(&self, url: &str, dest: &Path) -> Result<String, String> {
        self.limiter.wait();
        let resp = self.agent.get(url).call().map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status().as_u16()));
        }
        let part = dest.with_extension("part");
        let result = (|| -> io::Result<String> {
            let mut reader = resp.into_body().into_reader();
            let mut file = fs::File::create(&part)?;
            let mut hasher = Sha256::new();
            let mut buf = vec![0u8; 64 * 1024];
            loop {
                let n = reader.read(&mut buf)?;
                if n == 0 {
                    break;
                }
                hasher.update(&buf[..n]);
                file.write_all(&buf[..n])?;
            }
            file.sync_all()?;
            fs::rename(&part, dest)?;
            Ok(hex(&hasher.finalize()))
        })();
        result.map_err(|e| {
            let _ = fs::remove_file(&part);
            e.to_string()
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn sidecar_path(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

fn read_sidecar(file: &Path) -> Option<String> {
    let text = fs::read_to_string(sidecar_path(file)).ok()?;
    text.split_whitespace().next().map(str::to_ascii_lowercase)
}

fn write_sidecar(file: &Path, digest: &str) -> io::Result<()> {
    let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    fs::write(sidecar_path(file), format!("{digest}  {name}\n"))
}

/// File extension taken from the URL's last path segment, `mp3` otherwise.
pub fn extension_for(url: &str) -> String {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let last = path.rsplit('/').next().unwrap_or("");
    match last.rsplit_once('.') {
        Some((stem, ext))
            if !stem.is_empty() && (1..=5).contains(&ext.len()) && ext.chars().all(|c| c.is_ascii_alphanumeric()) =>
        {
            ext.to_ascii_lowercase()
        }
        _ => "mp3".into(),
    }
}

/// Whether `path` exists and matches its sidecar (and `expected`, if given).
fn verified(path: &Path, expected: Option<&str>) -> Option<String> {
    let recorded = read_sidecar(path)?;
    if expected.is_some_and(|e| !e.eq_ignore_ascii_case(&recorded)) {
        return None;
    }
    let actual = sha256_file(path).ok()?;
    (actual == recorded).then_some(actual)
}

fn fetch_entry(entry: &mut RecordingMeta, dest_dir: &Path, fetcher: &Fetcher) -> Result<bool, String> {
    let url = entry.audio_url.clone().ok_or("no audio_url")?;
    let file = dest_dir.join(format!("{}.{}", entry.recording_id, extension_for(&url)));
    entry.wav_path = Some(dest_dir.join(format!("{}.wav", entry.recording_id)).to_string_lossy().into_owned());
    let downloaded = if let Some(digest) = verified(&file, None) {
        entry.sha256 = Some(digest);
        false
    } else {
        let digest = fetcher.download(&url, &file)?;
        write_sidecar(&file, &digest).map_err(|e| e.to_string())?;
        entry.sha256 = Some(digest);
        true
    };
    entry.local_path = Some(file.to_string_lossy().into_owned());
    entry.error = None;
    Ok(downloaded)
}

/// Download every entry's audio into `dest_dir`, filling `local_path`,
/// `wav_path` and `sha256`. A failing entry gets `error` set and the rest
/// continue.
pub fn fetch_audio(manifest: &mut Manifest, dest_dir: &Path, fetcher: &Fetcher) -> Result<FetchReport, IngestError> {
    fs::create_dir_all(dest_dir).map_err(|e| IngestError::io_at(dest_dir, e))?;
    let mut report = FetchReport::default();
    for entry in manifest.entries_mut() {
        match fetch_entry(entry, dest_dir, fetcher) {
            Ok(true) => report.downloaded += 1,
            Ok(false) => report.skipped += 1,
            Err(msg) => {
                entry.error = Some(format!("download failed: {msg}"));
                entry.local_path = None;
                report.failed += 1;
            }
        }
    }
    Ok(report)
}
