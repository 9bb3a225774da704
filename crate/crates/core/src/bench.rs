//! Capture overhead: a plain concurrent GET crawler as the lower bound on
//! fetch time, and the per-resource delta against trace-driven captures.

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

use futures_util::stream::{self, StreamExt};
use reqwest::header::{HeaderMap, HeaderValue, ACCEPT, ACCEPT_LANGUAGE};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tracer_warc::{read_records, RecordType, WarcError};

use crate::capture::CaptureResult;
use crate::driver::DEFAULT_USER_AGENT;

pub const DEFAULT_WORKERS: usize = 16;
pub const MAX_REDIRECTS: usize = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{tracer} tracer results but {baseline} baseline crawls")]
    LengthMismatch { tracer: usize, baseline: usize },
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error("cannot build HTTP client: {0}")]
    Client(String),
    #[error(transparent)]
    Warc(#[from] WarcError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Distinct target URIs of all response records, in file order.
pub fn extract_uris(warc: &Path) -> Result<Vec<String>, BenchError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in read_records(warc)? {
        let rec = rec?.record;
        if rec.record_type() != Some(RecordType::Response) {
            continue;
        }
        if let Some(u) = rec.target_uri() {
            if seen.insert(u.to_string()) {
                out.push(u.to_string());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CrawlConfig {
    pub workers: usize,
    pub timeout_ms: u64,
    pub user_agent: String,
    /// Extra PEM trust anchors.
    pub trust_pem: Vec<Vec<u8>>,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        Self {
            workers: DEFAULT_WORKERS,
            timeout_ms: 60_000,
            user_agent: DEFAULT_USER_AGENT.to_string(),
            trust_pem: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlOutcome {
    pub uri: String,
    pub status: Option<u16>,
    pub bytes: u64,
    pub ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlTiming {
    pub uris: usize,
    pub workers: usize,
    pub total_ms: u64,
    pub outcomes: Vec<CrawlOutcome>,
}

fn client(config: &CrawlConfig) -> Result<reqwest::Client, BenchError> {
    let mut headers = HeaderMap::new();
    headers.insert(
        ACCEPT,
        HeaderValue::from_static("text/html,application/xhtml+xml,application/xml;q=0.9,*/*;q=0.8"),
    );
    headers.insert(ACCEPT_LANGUAGE, HeaderValue::from_static("en-US,en;q=0.9"));
    let mut b = reqwest::Client::builder()
        .user_agent(config.user_agent.clone())
        .default_headers(headers)
        .no_proxy()
        .timeout(Duration::from_millis(config.timeout_ms))
        .redirect(reqwest::redirect::Policy::limited(MAX_REDIRECTS));
    if !config.trust_pem.is_empty() {
        let mut certs = Vec::new();
        for pem in &config.trust_pem {
            certs.extend(
                reqwest::Certificate::from_pem_bundle(pem).map_err(|e| BenchError::Client(e.to_string()))?,
            );
        }
        b = b.tls_certs_merge(certs);
    }
    b.build().map_err(|e| BenchError::Client(e.to_string()))
}

async fn fetch(client: &reqwest::Client, uri: &str) -> CrawlOutcome {
    let start = Instant::now();
    let result = async {
        let resp = client.get(uri).send().await?;
        let status = resp.status().as_u16();
        let body = resp.bytes().await?;
        Ok::<_, reqwest::Error>((status, body.len() as u64))
    }
    .await;
    let ms = start.elapsed().as_millis() as u64;
    match result {
        Ok((status, bytes)) => CrawlOutcome {
            uri: uri.to_string(),
            status: Some(status),
            bytes,
            ms,
            error: None,
        },
        Err(e) => CrawlOutcome {
            uri: uri.to_string(),
            status: e.status().map(|s| s.as_u16()),
            bytes: 0,
            ms,
            error: Some(e.to_string()),
        },
    }
}

/// Fetches every URI exactly once with a plain GET, `workers` at a time.
/// Failures are recorded per URI and never stop the crawl.
pub async fn baseline_crawl(uris: &[String], config: &CrawlConfig) -> Result<CrawlTiming, BenchError> {
    if config.workers == 0 {
        return Err(BenchError::NoWorkers);
    }
    let client = client(config)?;
    let start = Instant::now();
    let outcomes: Vec<CrawlOutcome> = stream::iter(uris)
        .map(|u| fetch(&client, u))
        .buffered(config.workers)
        .collect()
        .await;
    Ok(CrawlTiming {
        uris: uris.len(),
        workers: config.workers,
        total_ms: start.elapsed().as_millis() as u64,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub resource_url: String,
    pub tracer_ms: u64,
    pub baseline_ms: u64,
    pub delta_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub rows: Vec<OverheadRow>,
    pub mean_delta_ms: f64,
    pub min_delta_ms: i64,
    pub max_delta_ms: i64,
    /// Total tracer time over total baseline time; absent when the
    /// baseline total is zero.
    pub slowdown: Option<f64>,
}

/// Report over `(resource_url, tracer_ms, baseline_ms)` triples.
pub fn overhead_from_totals(rows: &[(String, u64, u64)]) -> OverheadReport {
    let rows: Vec<OverheadRow> = rows
        .iter()
        .map(|(url, t, b)| OverheadRow {
            resource_url: url.clone(),
            tracer_ms: *t,
            baseline_ms: *b,
            delta_ms: *t as i64 - *b as i64,
        })
        .collect();
    let deltas: Vec<i64> = rows.iter().map(|r| r.delta_ms).collect();
    let tracer: u64 = rows.iter().map(|r| r.tracer_ms).sum();
    let baseline: u64 = rows.iter().map(|r| r.baseline_ms).sum();
    OverheadReport {
        mean_delta_ms: if deltas.is_empty() {
            0.0
        } else {
            deltas.iter().sum::<i64>() as f64 / deltas.len() as f64
        },
        min_delta_ms: deltas.iter().copied().min().unwrap_or(0),
        max_delta_ms: deltas.iter().copied().max().unwrap_or(0),
        slowdown: (baseline > 0).then(|| tracer as f64 / baseline as f64),
        rows,
    }
}

/// Pairs capture results with baseline crawls of the same resources.
pub fn overhead_report(tracer: &[CaptureResult], baseline: &[CrawlTiming]) -> Result<OverheadReport, BenchError> {
    if tracer.len() != baseline.len() {
        return Err(BenchError::LengthMismatch {
            tracer: tracer.len(),
            baseline: baseline.len(),
        });
    }
    let rows: Vec<(String, u64, u64)> = tracer
        .iter()
        .zip(baseline)
        .map(|(t, b)| (t.target_url.clone(), t.timings.total_ms, b.total_ms))
        .collect();
    Ok(overhead_from_totals(&rows))
}

/// `resource_url,tracer_ms,baseline_ms,delta_ms`, one line per resource.
pub fn overhead_csv(report: &OverheadReport) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["resource_url", "tracer_ms", "baseline_ms", "delta_ms"])?;
    for r in &report.rows {
        w.write_record([
            r.resource_url.clone(),
            r.tracer_ms.to_string(),
            r.baseline_ms.to_string(),
            r.delta_ms.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_resource_report() {
        let r = overhead_from_totals(&[("a".into(), 30_000, 10_000), ("b".into(), 40_000, 20_000)]);
        assert_eq!(r.rows.iter().map(|r| r.delta_ms).collect::<Vec<_>>(), [20_000, 20_000]);
        assert_eq!(r.mean_delta_ms, 20_000.0);
        assert_eq!(format!("{:.2}", r.slowdown.unwrap()), "2.33");
    }

    #[test]
    fn identical_timings() {
        let r = overhead_from_totals(&[("a".into(), 5, 5), ("b".into(), 7, 7)]);
        assert!(r.rows.iter().all(|r| r.delta_ms == 0));
        assert_eq!(r.slowdown, Some(1.0));
    }

    #[test]
    fn zero_baseline_has_no_slowdown() {
        assert_eq!(overhead_from_totals(&[("a".into(), 5, 0)]).slowdown, None);
        assert_eq!(overhead_from_totals(&[]).slowdown, None);
    }

    #[test]
    fn csv_layout() {
        let r = overhead_from_totals(&[("https://h/a,b".into(), 3, 1)]);
        assert_eq!(
            overhead_csv(&r).unwrap(),
            "resource_url,tracer_ms,baseline_ms,delta_ms\n\"https://h/a,b\",3,1,2\n"
        );
    }

    #[test]
    fn mismatched_lengths() {
        let b = CrawlTiming {
            uris: 0,
            workers: 1,
            total_ms: 0,
            outcomes: vec![],
        };
        assert!(matches!(
            overhead_report(&[], &[b]),
            Err(BenchError::LengthMismatch { tracer: 0, baseline: 1 })
        ));
    }
}
