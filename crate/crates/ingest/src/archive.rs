//! Client for the public recording archive's JSON search API.
//!
//! Response field names live in [`FieldMap`] so a schema change is a config
//! edit. Quality and background filters are re-checked on every returned
//! record, since the archive's own search is not trusted to apply them.

use std::cell::Cell;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::manifest::{Manifest, QueryTerms, RecordingMeta, Role};
use crate::IngestError;

/// Environment variable overriding the API base URL.
pub const BASE_URL_ENV: &str = "CHORUS_ARCHIVE_URL";
/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "XC_API_KEY";
pub const DEFAULT_BASE_URL: &str = "https://xeno-canto.org/api/3";

/// Names of the fields in the archive's JSON responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub recordings: String,
    pub num_pages: String,
    pub id: String,
    pub genus: String,
    pub epithet: String,
    pub quality: String,
    pub background: String,
    pub length: String,
    pub file: String,
    /// Search expression; `{genus}`, `{epithet}` and `{quality}` are
    /// substituted.
    pub query_template: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            recordings: "recordings".into(),
            num_pages: "numPages".into(),
            id: "id".into(),
            genus: "gen".into(),
            epithet: "sp".into(),
            quality: "q".into(),
            background: "also".into(),
            length: "length".into(),
            file: "file".into(),
            query_template: "gen:{genus} sp:{epithet} q:{quality}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchiveConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Minimum spacing between requests.
    #[serde(with = "millis")]
    pub min_interval: Duration,
    pub max_pages: u32,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub fields: FieldMap,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            min_interval: Duration::from_secs(1),
            max_pages: 100,
            timeout: Duration::from_secs(60),
            fields: FieldMap::default(),
        }
    }
}

impl ArchiveConfig {
    /// Apply `CHORUS_ARCHIVE_URL` and `XC_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/recordings", self.base_url.trim_end_matches('/'))
    }
}

/// Spaces requests at least `min_interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    last: Cell<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            last: Cell::new(None),
        }
    }

    pub fn wait(&self) {
        if let Some(prev) = self.last.get() {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        self.last.set(Some(Instant::now()));
    }
}

/// Split a binomial name into genus and epithet.
pub fn split_binomial(name: &str) -> Result<(&str, &str), IngestError> {
    let mut parts = name.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(g), Some(e), None) => Ok((g, e)),
        _ => Err(IngestError::InvalidArgument(format!("{name:?} is not a binomial name"))),
    }
}

/// One planned search request.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedQuery {
    pub species: String,
    pub url: String,
    pub query: String,
}

/// Result of a search over several species.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub manifest: Manifest,
    /// Species with no recording passing the filters.
    pub empty_species: Vec<String>,
    /// Records returned by the archive but dropped by the post-filter.
    pub filtered_out: usize,
    pub requests: usize,
}

pub struct ArchiveClient {
    config: ArchiveConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl ArchiveClient {
    pub fn new(config: ArchiveConfig) -> Self {
        Self {
            agent: build_agent(config.timeout),
            limiter: RateLimiter::new(config.min_interval),
            config,
        }
    }

    pub fn config(&self) -> &ArchiveConfig {
        &self.config
    }

    /// The first-page request for each species, without sending anything.
    pub fn plan(&self, species: &[String], quality: &str) -> Result<Vec<PlannedQuery>, IngestError> {
        species
            .iter()
            .map(|s| {
                let (genus, epithet) = split_binomial(s)?;
                let query = self
                    .config
                    .fields
                    .query_template
                    .replace("{genus}", genus)
                    .replace("{epithet}", epithet)
                    .replace("{quality}", quality);
                Ok(PlannedQuery {
                    species: s.clone(),
                    url: self.config.endpoint(),
                    query,
                })
            })
            .collect()
    }

    /// Search every species, follow pagination, and keep only records with
    /// the requested quality and (if `no_background`) no background species.
    pub fn query_archive(
        &self,
        species: &[String],
        quality: &str,
        no_background: bool,
        role: Role,
        created_at: &str,
    ) -> Result<QueryOutcome, IngestError> {
        if species.is_empty() {
            return Err(IngestError::InvalidArgument("species list is empty".into()));
        }
        let terms = QueryTerms {
            species: species.to_vec(),
            quality: Some(quality.to_string()),
            no_background,
            endpoint: Some(self.config.endpoint()),
        };
        let mut entries: Vec<RecordingMeta> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut empty_species = Vec::new();
        let mut filtered_out = 0;
        let mut requests = 0;
        for plan in self.plan(species, quality)? {
            let mut kept = 0;
            let mut page = 1u32;
            loop {
                let body = self.get_page(&plan, page)?;
                requests += 1;
                let (records, num_pages) = self.parse_page(&body)?;
                for rec in records {
                    let mut meta = self.parse_record(rec)?;
                    meta.species = plan.species.clone();
                    if meta.satisfies(&terms) {
                        if seen.insert(meta.recording_id.clone()) {
                            entries.push(meta);
                            kept += 1;
                        }
                    } else {
                        filtered_out += 1;
                    }
                }
                if page >= num_pages || page >= self.config.max_pages {
                    break;
                }
                page += 1;
            }
            if kept == 0 {
                empty_species.push(plan.species.clone());
            }
        }
        Ok(QueryOutcome {
            manifest: Manifest::new(role, created_at, terms, entries)?,
            empty_species,
            filtered_out,
            requests,
        })
    }

    fn get_page(&self, plan: &PlannedQuery, page: u32) -> Result<String, IngestError> {
        self.limiter.wait();
        let mut req = self
            .agent
            .get(&plan.url)
            .query("query", &plan.query)
            .query("page", page.to_string());
        if let Some(key) = &self.config.api_key {
            req = req.query("key", key);
        }
        let mut resp = req.call().map_err(|e| IngestError::Network(format!("{}: {e}", plan.url)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(IngestError::Network(format!("{} returned HTTP {}", plan.url, status.as_u16())));
        }
        resp.body_mut()
            .read_to_string()
            .map_err(|e| IngestError::Network(format!("{}: {e}", plan.url)))
    }

    fn parse_page(&self, body: &str) -> Result<(Vec<Value>, u32), IngestError> {
        let f = &self.config.fields;
        let v: Value = serde_json::from_str(body).map_err(|e| IngestError::SchemaChanged(format!("response is not JSON: {e}")))?;
        let records = v
            .get(&f.recordings)
            .and_then(Value::as_array)
            .ok_or_else(|| IngestError::SchemaChanged(format!("missing array field {:?}", f.recordings)))?
            .clone();
        let pages = match v.get(&f.num_pages) {
            Some(Value::Number(n)) => n.as_u64(),
            Some(Value::String(s)) => s.parse().ok(),
            _ => None,
        }
        .ok_or_else(|| IngestError::SchemaChanged(format!("missing page count field {:?}", f.num_pages)))?;
        Ok((records, pages as u32))
    }

    fn parse_record(&self, rec: Value) -> Result<RecordingMeta, IngestError> {
        let f = &self.config.fields;
        let missing = |name: &str| IngestError::SchemaChanged(format!("record lacks field {name:?}"));
        let text = |name: &str| -> Result<String, IngestError> {
            match rec.get(name) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Number(n)) => Ok(n.to_string()),
                _ => Err(missing(name)),
            }
        };
        let background = match rec.get(&f.background) {
            Some(Value::Array(items)) => items
                .iter()
                .filter_map(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            Some(Value::Null) => Vec::new(),
            _ => return Err(missing(&f.background)),
        };
        Ok(RecordingMeta {
            recording_id: text(&f.id)?,
            species: String::new(),
            quality: text(&f.quality)?,
            background_species: background,
            duration_s: text(&f.length).ok().and_then(|s| parse_duration(&s)),
            audio_url: Some(text(&f.file)?),
            ..Default::default()
        })
    }
}

pub(crate) fn build_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .user_agent(concat!("chorus-ingest/", env!("CARGO_PKG_VERSION")))
        .build()
        .into()
}

/// Parse `"s"`, `"m:ss"` or `"h:mm:ss"` into seconds.
pub fn parse_duration(s: &str) -> Option<f64> {
    let mut total = 0.0;
    for part in s.trim().split(':') {
        total = total * 60.0 + part.trim().parse::<f64>().ok()?;
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("0:34"), Some(34.0));
        assert_eq!(parse_duration("1:02:03"), Some(3723.0));
        assert_eq!(parse_duration("12.5"), Some(12.5));
        assert_eq!(parse_duration("x"), None);
    }

    #[test]
    fn binomials() {
        assert_eq!(split_binomial("Emberiza  pusilla").unwrap(), ("Emberiza", "pusilla"));
        assert!(split_binomial("Emberiza").is_err());
        assert!(split_binomial("a b c").is_err());
    }

    #[test]
    fn plan_uses_template() {
        let client = ArchiveClient::new(ArchiveConfig {
            base_url: "http://h/api/3/".into(),
            ..Default::default()
        });
        let p = client.plan(&["Turdus merula".into()], "A").unwrap();
        assert_eq!(p[0].url, "http://h/api/3/recordings");
        assert_eq!(p[0].query, "gen:Turdus sp:merula q:A");
    }

    #[test]
    fn blank_background_counts_as_none() {
        let client = ArchiveClient::new(ArchiveConfig::default());
        let rec = serde_json::json!({"id": "7", "q": "A", "also": [""], "file": "u", "length": "0:10"});
        let m = client.parse_record(rec).unwrap();
        assert!(m.background_species.is_empty());
        assert_eq!(m.duration_s, Some(10.0));
        let rec = serde_json::json!({"id": 7, "q": "A", "file": "u"});
        assert!(matches!(client.parse_record(rec), Err(IngestError::SchemaChanged(_))));
    }

    #[test]
    fn limiter_spaces_calls() {
        let l = RateLimiter::new(Duration::from_millis(30));
        let t = Instant::now();
        l.wait();
        l.wait();
        l.wait();
        assert!(t.elapsed() >= Duration::from_millis(60));
    }
}
