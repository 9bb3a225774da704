//! End-to-end capture of one resource, and batches of them.
//!
//! Every capture owns a fresh proxy and browser session, so idle detection
//! and WARC attribution never mix traffic of different resources.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use futures_util::stream::{self, StreamExt};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use tracer_warc::{build_cdxj, write_cdxj, Compression};

use crate::compiler::{compile, CompileError};
use crate::driver::{open_session, DriverConfig, PlanStatus, SessionReport, StepError, StepTiming};
use crate::json::to_canonical;
use crate::proxy::{start_proxy, CaptureLog, Disposition, ProxyConfig, ProxyError};
use crate::quality::UriInventory;
use crate::repo::TraceSource;
use crate::tls::UpstreamTrust;
use crate::trace::Trace;

pub const WARC_FILE: &str = "capture.warc.gz";
pub const CDXJ_FILE: &str = "index.cdxj";
pub const RESULT_FILE: &str = "result.json";

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("trace {trace} does not apply to {url}")]
    TraceMismatch { trace: String, url: String },
    #[error("no trace applies to {0}")]
    NoTrace(String),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("capture environment failed: {0}")]
    Environment(String),
}

impl CaptureError {
    pub fn kind(&self) -> &'static str {
        match self {
            CaptureError::TraceMismatch { .. } | CaptureError::NoTrace(_) => "trace-mismatch",
            CaptureError::Compile(_) => "invalid-trace",
            CaptureError::Environment(_) => "environment",
        }
    }
}

impl From<ProxyError> for CaptureError {
    fn from(e: ProxyError) -> Self {
        CaptureError::Environment(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct CaptureConfig {
    pub out_dir: PathBuf,
    /// Session template; the proxy endpoint and its CA are filled in per
    /// capture.
    pub driver: DriverConfig,
    pub upstream: UpstreamTrust,
    pub compression: Compression,
    /// Extra attempts for network-classified step failures.
    pub retries: u32,
    pub workers: usize,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("captures"),
            driver: DriverConfig::default(),
            upstream: UpstreamTrust::default(),
            compression: Compression::GzipPerRecord,
            retries: 1,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureStatus {
    Ok,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaptureTimings {
    pub total_ms: u64,
    pub per_step: Vec<StepTiming>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExchangeCounts {
    pub recorded: usize,
    pub duplicate_skipped: usize,
    pub connect_tunnel: usize,
    pub error: usize,
}

impl ExchangeCounts {
    fn of(log: &CaptureLog) -> Self {
        Self {
            recorded: log.count(Disposition::Recorded),
            duplicate_skipped: log.count(Disposition::DuplicateSkipped),
            connect_tunnel: log.count(Disposition::ConnectTunnel),
            error: log.count(Disposition::Error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureResult {
    pub capture_id: String,
    pub target_url: String,
    pub trace_id: Option<String>,
    /// Repository version of the trace, when it came from a repository.
    pub trace_version: Option<u64>,
    pub started: DateTime<Utc>,
    pub warc_path: Option<PathBuf>,
    pub cdxj_path: Option<PathBuf>,
    pub inventory: UriInventory,
    pub timings: CaptureTimings,
    pub status: CaptureStatus,
    pub errors: Vec<StepError>,
    pub skipped: Vec<StepError>,
    pub clicks: u64,
    pub retries: u32,
    pub exchanges: Option<ExchangeCounts>,
}

impl CaptureResult {
    fn failed(capture_id: String, url: &str, trace: Option<&Trace>, version: Option<u64>, e: &CaptureError) -> Self {
        Self {
            capture_id,
            target_url: url.to_string(),
            trace_id: trace.map(|t| t.id.clone()),
            trace_version: version,
            started: Utc::now(),
            warc_path: None,
            cdxj_path: None,
            inventory: UriInventory::new(url),
            timings: CaptureTimings {
                total_ms: 0,
                per_step: Vec::new(),
            },
            status: CaptureStatus::Failed,
            errors: vec![StepError {
                step: 0,
                action: None,
                kind: e.kind().into(),
                message: e.to_string(),
            }],
            skipped: Vec::new(),
            clicks: 0,
            retries: 0,
            exchanges: None,
        }
    }
}

/// Directory-safe id derived from the URL: a readable slug plus a short
/// hash so that distinct URLs never share a directory.
pub fn capture_id(url: &str) -> String {
    let stripped = url.split_once("://").map_or(url, |(_, rest)| rest);
    let mut slug = String::new();
    for c in stripped.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.ends_with('-') {
            slug.push('-');
        }
        if slug.len() >= 60 {
            break;
        }
    }
    let slug = slug.trim_matches('-');
    let hash = hex::encode(&Sha256::digest(url.as_bytes())[..4]);
    if slug.is_empty() {
        hash
    } else {
        format!("{slug}-{hash}")
    }
}

/// What one proxied browser session produced.
pub(crate) struct SessionRun {
    pub report: SessionReport,
    pub status: PlanStatus,
    pub log: CaptureLog,
}

/// Proxy up, session through it, plan executed, session closed, proxy
/// stopped. `warc` of `None` runs the proxy for its idle signal only.
pub(crate) async fn run_session(
    trace: &Trace,
    url: &str,
    driver: &DriverConfig,
    upstream: &UpstreamTrust,
    warc: Option<&Path>,
    compression: Compression,
    retries: u32,
) -> Result<SessionRun, CaptureError> {
    let plan = compile(trace)?.bind(url);
    let proxy = start_proxy(ProxyConfig {
        warc_output: warc.map(Path::to_path_buf),
        compression,
        upstream: upstream.clone(),
        info: vec![
            ("target-url".into(), url.to_string()),
            ("trace-id".into(), trace.id.clone()),
        ],
        ..ProxyConfig::default()
    })
    .await?;
    let mut cfg = driver.clone();
    cfg.proxy_endpoint = Some(proxy.endpoint());
    cfg.trust_pem.push(proxy.ca_pem().as_bytes().to_vec());
    cfg.retries = retries;
    let mut session = match open_session(&cfg, Some(proxy.probe())).await {
        Ok(s) => s,
        Err(e) => {
            proxy.stop().await;
            return Err(CaptureError::Environment(e.to_string()));
        }
    };
    let status = session.execute_plan(&plan).await;
    let report = session.close_session().await;
    let log = proxy.stop().await;
    Ok(SessionRun { report, status, log })
}

fn status_of(run: &SessionRun) -> CaptureStatus {
    match run.status {
        PlanStatus::Failed => CaptureStatus::Failed,
        _ if !run.report.errors.is_empty() || !run.report.skipped.is_empty() => CaptureStatus::Partial,
        PlanStatus::Partial => CaptureStatus::Partial,
        PlanStatus::Ok => CaptureStatus::Ok,
    }
}

/// Captures `url` guided by `trace` into `<out_dir>/<capture_id(url)>/`.
pub async fn capture(url: &str, trace: &Trace, config: &CaptureConfig) -> Result<CaptureResult, CaptureError> {
    capture_as(&capture_id(url), url, trace, None, config).await
}

/// [`capture`] with an explicit output directory name and trace version.
pub async fn capture_as(
    id: &str,
    url: &str,
    trace: &Trace,
    trace_version: Option<u64>,
    config: &CaptureConfig,
) -> Result<CaptureResult, CaptureError> {
    if !trace.url_pattern.matches(url).unwrap_or(false) {
        return Err(CaptureError::TraceMismatch {
            trace: trace.id.clone(),
            url: url.to_string(),
        });
    }
    compile(trace)?;
    let started = Utc::now();
    let clock = Instant::now();
    let dir = config.out_dir.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| CaptureError::Environment(format!("{}: {e}", dir.display())))?;
    let warc = dir.join(WARC_FILE);
    let run = run_session(
        trace,
        url,
        &config.driver,
        &config.upstream,
        Some(&warc),
        config.compression,
        config.retries,
    )
    .await?;

    let cdxj = dir.join(CDXJ_FILE);
    let mut errors = run.report.errors.clone();
    let mut cdxj_path = None;
    let index = tokio::task::spawn_blocking({
        let warc = warc.clone();
        let cdxj = cdxj.clone();
        move || build_cdxj(&warc).and_then(|lines| write_cdxj(&lines, &cdxj))
    })
    .await
    .map_err(|e| CaptureError::Environment(e.to_string()))?;
    match index {
        Ok(()) => cdxj_path = Some(cdxj),
        Err(e) => errors.push(StepError {
            step: run.report.timings.len(),
            action: None,
            kind: "index".into(),
            message: e.to_string(),
        }),
    }

    let mut status = status_of(&run);
    if status == CaptureStatus::Ok && !errors.is_empty() {
        status = CaptureStatus::Partial;
    }
    let mut inventory = UriInventory::from_entries(url, &run.report.inventory);
    for label in trace.categories.values() {
        inventory.declare(label);
    }
    let result = CaptureResult {
        capture_id: id.to_string(),
        target_url: url.to_string(),
        trace_id: Some(trace.id.clone()),
        trace_version,
        started,
        warc_path: Some(warc),
        cdxj_path,
        inventory,
        timings: CaptureTimings {
            total_ms: clock.elapsed().as_millis() as u64,
            per_step: run.report.timings.clone(),
        },
        status,
        errors,
        skipped: run.report.skipped.clone(),
        clicks: run.report.clicks,
        retries: run.report.retries,
        exchanges: Some(ExchangeCounts::of(&run.log)),
    };
    write_result(&dir, &result)?;
    Ok(result)
}

fn write_result(dir: &Path, result: &CaptureResult) -> Result<(), CaptureError> {
    let bytes = to_canonical(result).map_err(|e| CaptureError::Environment(e.to_string()))?;
    std::fs::write(dir.join(RESULT_FILE), bytes).map_err(|e| CaptureError::Environment(e.to_string()))
}

/// Captures every URL with its best-matching trace, at most
/// `config.workers` at a time. Results keep the input order and a failing
/// URL never stops the others.
pub async fn capture_batch(urls: &[String], source: Arc<dyn TraceSource>, config: &CaptureConfig) -> Vec<CaptureResult> {
    let workers = config.workers.max(1);
    stream::iter(urls.iter().enumerate())
        .map(|(i, url)| {
            let source = source.clone();
            async move {
                let id = format!("{i:04}-{}", capture_id(url));
                let selected = match source.select(url) {
                    Ok(Some(s)) => s,
                    Ok(None) => {
                        let e = CaptureError::NoTrace(url.clone());
                        return failed_and_saved(id, url, None, None, &e, config);
                    }
                    Err(e) => {
                        let e = CaptureError::Environment(e.to_string());
                        return failed_and_saved(id, url, None, None, &e, config);
                    }
                };
                match capture_as(&id, url, &selected.trace, selected.version, config).await {
                    Ok(r) => r,
                    Err(e) => failed_and_saved(id, url, Some(&selected.trace), selected.version, &e, config),
                }
            }
        })
        .buffered(workers)
        .collect()
        .await
}

fn failed_and_saved(
    id: String,
    url: &str,
    trace: Option<&Trace>,
    version: Option<u64>,
    e: &CaptureError,
    config: &CaptureConfig,
) -> CaptureResult {
    let mut result = CaptureResult::failed(id, url, trace, version, e);
    let dir = config.out_dir.join(&result.capture_id);
    // A WARC may exist from a session that failed after the proxy started.
    let warc = dir.join(WARC_FILE);
    if warc.exists() {
        result.warc_path = Some(warc);
    }
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = write_result(&dir, &result);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_readable_and_distinct() {
        let a = capture_id("https://github.com/org/repo");
        assert!(a.starts_with("github-com-org-repo-"));
        assert_eq!(a.len(), "github-com-org-repo-".len() + 8);
        assert_ne!(a, capture_id("https://github.com/org/repo/"));
        assert_eq!(a, capture_id("https://github.com/org/repo"));
        let long = capture_id(&format!("https://h/{}", "x".repeat(500)));
        assert!(long.len() <= 60 + 9);
    }
}
