//! Client side of a shared, versioned trace repository.
//!
//! Layout, both remote and in the local cache:
//!
//! ```text
//! manifest.json                      {"traces": [TraceRef, ...]}
//! traces/<id>/<version>.trace.json   canonical trace document
//! traces/<id>/latest                 highest version, as text
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::json::to_canonical;
use crate::trace::{parse_trace, serialize_trace, Trace, TraceError};

pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".sync.lock";

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("repository unreachable: {0}")]
    RemoteUnreachable(String),
    #[error("malformed repository: {0}")]
    Layout(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRef {
    pub id: String,
    pub version: u64,
    /// `sha256:<hex>` of the canonical serialization.
    pub digest: String,
    pub url_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub traces: Vec<TraceRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncReport {
    /// Versions of trace ids the cache did not know before.
    pub added: Vec<TraceRef>,
    /// New versions of already cached ids.
    pub updated: Vec<TraceRef>,
    pub unchanged: usize,
}

impl SyncReport {
    pub fn changes(&self) -> usize {
        self.added.len() + self.updated.len()
    }
}

pub fn digest_of(trace: &Trace) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(serialize_trace(trace))))
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

pub fn trace_path(root: &Path, id: &str, version: u64) -> PathBuf {
    root.join("traces").join(id).join(format!("{version}.trace.json"))
}

enum Remote {
    Http(reqwest::Client, Url),
    Dir(PathBuf),
}

impl Remote {
    fn parse(remote: &str) -> Result<Self, RepoError> {
        if remote.starts_with("http://") || remote.starts_with("https://") {
            let mut url = Url::parse(remote).map_err(|e| RepoError::RemoteUnreachable(format!("{remote}: {e}")))?;
            if !url.path().ends_with('/') {
                url.set_path(&format!("{}/", url.path()));
            }
            let client = reqwest::Client::builder()
                .build()
                .map_err(|e| RepoError::RemoteUnreachable(e.to_string()))?;
            return Ok(Remote::Http(client, url));
        }
        let dir = match remote.strip_prefix("file://") {
            Some(_) => Url::parse(remote)
                .ok()
                .and_then(|u| u.to_file_path().ok())
                .ok_or_else(|| RepoError::RemoteUnreachable(format!("bad file url {remote}")))?,
            None => PathBuf::from(remote),
        };
        if !dir.is_dir() {
            return Err(RepoError::RemoteUnreachable(format!("{} is not a directory", dir.display())));
        }
        Ok(Remote::Dir(dir))
    }

    fn location(&self, rel: &str) -> String {
        match self {
            Remote::Http(_, base) => base.join(rel).map(String::from).unwrap_or_else(|_| rel.to_string()),
            Remote::Dir(d) => d.join(rel).display().to_string(),
        }
    }

    /// `Ok(None)` when the file does not exist.
    async fn get(&self, rel: &str) -> Result<Option<Vec<u8>>, RepoError> {
        match self {
            Remote::Http(client, base) => {
                let url = base.join(rel).map_err(|e| RepoError::Layout(format!("{rel}: {e}")))?;
                let resp = client
                    .get(url.clone())
                    .send()
                    .await
                    .map_err(|e| RepoError::RemoteUnreachable(format!("{url}: {e}")))?;
                if resp.status() == reqwest::StatusCode::NOT_FOUND {
                    return Ok(None);
                }
                if !resp.status().is_success() {
                    return Err(RepoError::RemoteUnreachable(format!("{url}: HTTP {}", resp.status())));
                }
                let body = resp
                    .bytes()
                    .await
                    .map_err(|e| RepoError::RemoteUnreachable(format!("{url}: {e}")))?;
                Ok(Some(body.to_vec()))
            }
            Remote::Dir(d) => match fs::read(d.join(rel)) {
                Ok(b) => Ok(Some(b)),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(e.into()),
            },
        }
    }
}

fn parse_manifest(bytes: &[u8], what: &str) -> Result<Manifest, RepoError> {
    let m: Manifest = serde_json::from_slice(bytes).map_err(|e| RepoError::Layout(format!("{what}: {e}")))?;
    let mut seen = BTreeSet::new();
    for r in &m.traces {
        if !safe_id(&r.id) {
            return Err(RepoError::Layout(format!("{what}: bad trace id {:?}", r.id)));
        }
        if r.version == 0 {
            return Err(RepoError::Layout(format!("{what}: {} has version 0", r.id)));
        }
        if !seen.insert((r.id.clone(), r.version)) {
            return Err(RepoError::Layout(format!("{what}: {} v{} listed twice", r.id, r.version)));
        }
    }
    Ok(m)
}

/// The cache's manifest; an absent cache is an empty repository.
pub fn cached_manifest(cache_dir: &Path) -> Result<Manifest, RepoError> {
    match fs::read(cache_dir.join(MANIFEST)) {
        Ok(b) => parse_manifest(&b, "cache manifest"),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::default()),
        Err(e) => Err(e.into()),
    }
}

fn verify(bytes: &[u8], r: &TraceRef, origin: &str) -> Result<Trace, RepoError> {
    let trace = parse_trace(bytes).map_err(|e: TraceError| RepoError::Layout(format!("{origin}: {e}")))?;
    let digest = digest_of(&trace);
    if digest != r.digest {
        return Err(RepoError::Layout(format!(
            "{origin}: digest {digest} does not match manifest {}",
            r.digest
        )));
    }
    if trace.id != r.id || trace.url_pattern.as_str() != r.url_pattern {
        return Err(RepoError::Layout(format!("{origin}: id or url_pattern differ from manifest")));
    }
    Ok(trace)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("cache paths have parents");
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Mirrors `remote` (an HTTP(S) base URL, `file://` URL or directory) into
/// `cache_dir`. Cached versions are never removed or rewritten; a remote
/// that changes the content of a known version is rejected.
pub async fn sync(remote: &str, cache_dir: &Path) -> Result<SyncReport, RepoError> {
    let src = Remote::parse(remote)?;
    fs::create_dir_all(cache_dir)?;
    let lock = File::create(cache_dir.join(LOCK))?;
    lock.lock()?;

    let remote_manifest = match src.get(MANIFEST).await? {
        Some(b) => parse_manifest(&b, &src.location(MANIFEST))?,
        None => Manifest::default(),
    };
    let mut cache = cached_manifest(cache_dir)?;
    let known: BTreeMap<(String, u64), String> = cache
        .traces
        .iter()
        .map(|r| ((r.id.clone(), r.version), r.digest.clone()))
        .collect();
    let known_ids: BTreeSet<String> = cache.traces.iter().map(|r| r.id.clone()).collect();

    let mut report = SyncReport::default();
    let mut fetched = Vec::new();
    for r in &remote_manifest.traces {
        match known.get(&(r.id.clone(), r.version)) {
            Some(d) if *d == r.digest => {
                report.unchanged += 1;
                continue;
            }
            Some(_) => {
                return Err(RepoError::Layout(format!(
                    "{} v{} changed upstream; published versions are immutable",
                    r.id, r.version
                )))
            }
            None => {}
        }
        let rel = format!("traces/{}/{}.trace.json", r.id, r.version);
        let origin = src.location(&rel);
        let bytes = src
            .get(&rel)
            .await?
            .ok_or_else(|| RepoError::Layout(format!("{origin} is listed but missing")))?;
        let trace = verify(&bytes, r, &origin)?;
        let mut entry = r.clone();
        entry.source = Some(origin);
        fetched.push((entry, serialize_trace(&trace)));
    }

    for (entry, bytes) in fetched {
        write_atomic(&trace_path(cache_dir, &entry.id, entry.version), &bytes)?;
        if known_ids.contains(&entry.id) {
            report.updated.push(entry.clone());
        } else {
            report.added.push(entry.clone());
        }
        cache.traces.push(entry);
    }
    cache.traces.sort_by(|a, b| (&a.id, a.version).cmp(&(&b.id, b.version)));
    let mut latest: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &cache.traces {
        let v = latest.entry(&r.id).or_insert(0);
        *v = (*v).max(r.version);
    }
    for (id, v) in &latest {
        write_atomic(&cache_dir.join("traces").join(id).join("latest"), format!("{v}\n").as_bytes())?;
    }
    let bytes = to_canonical(&cache).map_err(|e| RepoError::Layout(e.to_string()))?;
    write_atomic(&cache_dir.join(MANIFEST), &bytes)?;
    Ok(report)
}

/// Latest version of every id whose pattern matches `url`, most specific
/// pattern first (longest literal prefix), then newest, then by id.
pub fn lookup(url: &str, cache_dir: &Path) -> Result<Vec<TraceRef>, RepoError> {
    let manifest = cached_manifest(cache_dir)?;
    let mut latest: BTreeMap<&str, &TraceRef> = BTreeMap::new();
    for r in &manifest.traces {
        let slot = latest.entry(&r.id).or_insert(r);
        if r.version > slot.version {
            *slot = r;
        }
    }
    let mut hits: Vec<TraceRef> = latest
        .into_values()
        .filter(|r| {
            crate::trace::UrlPattern::new(r.url_pattern.clone())
                .matches(url)
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    hits.sort_by(|a, b| {
        let spec = |r: &TraceRef| crate::trace::UrlPattern::new(r.url_pattern.clone()).literal_prefix_len();
        spec(b)
            .cmp(&spec(a))
            .then(b.version.cmp(&a.version))
            .then(a.id.cmp(&b.id))
    });
    Ok(hits)
}

/// Reads a cached trace and checks it against its manifest digest.
pub fn load(cache_dir: &Path, r: &TraceRef) -> Result<Trace, RepoError> {
    let path = trace_path(cache_dir, &r.id, r.version);
    let bytes = fs::read(&path)?;
    verify(&bytes, r, &path.display().to_string())
}

/// Any specific version that was ever synced.
pub fn resolve(cache_dir: &Path, id: &str, version: u64) -> Result<Option<Trace>, RepoError> {
    let manifest = cached_manifest(cache_dir)?;
    manifest
        .traces
        .iter()
        .find(|r| r.id == id && r.version == version)
        .map(|r| load(cache_dir, r))
        .transpose()
}

/// Adds `trace` as `version` to a repository at `root`, e.g. for publishing on a
/// static host. Existing versions must keep their content.
pub fn publish(root: &Path, trace: &Trace, version: u64) -> Result<TraceRef, RepoError> {
    if !safe_id(&trace.id) || version == 0 {
        return Err(RepoError::Layout(format!("cannot publish {} v{version}", trace.id)));
    }
    let mut manifest = cached_manifest(root)?;
    let entry = TraceRef {
        id: trace.id.clone(),
        version,
        digest: digest_of(trace),
        url_pattern: trace.url_pattern.as_str().to_string(),
        source: None,
    };
    if let Some(existing) = manifest.traces.iter().find(|r| r.id == entry.id && r.version == version) {
        if existing.digest == entry.digest {
            return Ok(existing.clone());
        }
        return Err(RepoError::Layout(format!("{} v{version} already exists", entry.id)));
    }
    write_atomic(&trace_path(root, &entry.id, version), &serialize_trace(trace))?;
    manifest.traces.push(entry.clone());
    manifest.traces.sort_by(|a, b| (&a.id, a.version).cmp(&(&b.id, b.version)));
    let latest = manifest
        .traces
        .iter()
        .filter(|r| r.id == entry.id)
        .map(|r| r.version)
        .max()
        .unwrap_or(version);
    write_atomic(
        &root.join("traces").join(&entry.id).join("latest"),
        format!("{latest}\n").as_bytes(),
    )?;
    let bytes = to_canonical(&manifest).map_err(|e| RepoError::Layout(e.to_string()))?;
    write_atomic(&root.join(MANIFEST), &bytes)?;
    Ok(entry)
}

#[derive(Debug, Clone)]
pub struct SelectedTrace {
    pub trace: Trace,
    /// Repository version, when the trace came from a repository.
    pub version: Option<u64>,
}

/// Picks the trace to apply to a URL.
pub trait TraceSource: Send + Sync {
    fn select(&self, url: &str) -> Result<Option<SelectedTrace>, RepoError>;
}

/// A synced cache directory.
#[derive(Debug, Clone)]
pub struct LocalRepository {
    pub cache_dir: PathBuf,
}

impl TraceSource for LocalRepository {
    fn select(&self, url: &str) -> Result<Option<SelectedTrace>, RepoError> {
        match lookup(url, &self.cache_dir)?.first() {
            Some(r) => Ok(Some(SelectedTrace {
                trace: load(&self.cache_dir, r)?,
                version: Some(r.version),
            })),
            None => Ok(None),
        }
    }
}

/// Unversioned in-memory traces; ties between equally specific patterns
/// go to the earlier trace.
#[derive(Debug, Clone, Default)]
pub struct TraceSet(pub Vec<Trace>);

impl TraceSource for TraceSet {
    fn select(&self, url: &str) -> Result<Option<SelectedTrace>, RepoError> {
        let mut best: Option<&Trace> = None;
        for t in &self.0 {
            if !t.url_pattern.matches(url).unwrap_or(false) {
                continue;
            }
            if best.is_none_or(|b| t.url_pattern.literal_prefix_len() > b.url_pattern.literal_prefix_len()) {
                best = Some(t);
            }
        }
        Ok(best.map(|t| SelectedTrace {
            trace: t.clone(),
            version: None,
        }))
    }
}
