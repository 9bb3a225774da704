//! Archival quality: which URIs of interest a resource should have, which
//! ones made it into the archive, and the threshold-table report over many
//! resources.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use tracer_warc::{read_records, RecordType, WarcError};

use crate::capture::{run_session, CaptureError};
use crate::driver::{DriverConfig, InventoryEntry, PlanStatus, StepError};
use crate::tls::UpstreamTrust;
use crate::trace::Trace;

pub const THRESHOLDS: [u32; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];
/// Row label for the all-categories aggregate.
pub const OVERALL: &str = "All";

#[derive(Debug, Error)]
pub enum LiveError {
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("inventory run failed: {0}")]
    Driver(String),
}

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("no resources to aggregate")]
    EmptyInput,
    #[error(transparent)]
    Warc(#[from] WarcError),
}

/// Lower-cases scheme and host, resolves dot segments, drops the fragment
/// and a default port. The query is kept verbatim. Strings that are not
/// absolute URLs come back trimmed but otherwise unchanged.
pub fn normalize(uri: &str) -> String {
    let trimmed = uri.trim();
    match Url::parse(trimmed) {
        Ok(mut u) => {
            u.set_fragment(None);
            u.into()
        }
        Err(_) => trimmed.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UriInventory {
    pub resource_url: String,
    pub categories: BTreeMap<String, BTreeSet<String>>,
    pub total: usize,
}

impl UriInventory {
    pub fn new(resource_url: &str) -> Self {
        Self {
            resource_url: resource_url.to_string(),
            ..Self::default()
        }
    }

    /// Adds `uri` unless it is the resource itself. Returns whether the
    /// inventory grew.
    pub fn insert(&mut self, category: &str, uri: &str) -> bool {
        let uri = normalize(uri);
        if uri == normalize(&self.resource_url) {
            return false;
        }
        let added = self.categories.entry(category.to_string()).or_default().insert(uri);
        if added {
            self.total += 1;
        }
        added
    }

    /// Makes `category` present even if nothing lands in it.
    pub fn declare(&mut self, category: &str) {
        self.categories.entry(category.to_string()).or_default();
    }

    pub fn from_entries<'a>(resource_url: &str, entries: impl IntoIterator<Item = &'a InventoryEntry>) -> Self {
        let mut inv = Self::new(resource_url);
        for e in entries {
            inv.insert(&e.category, &e.uri);
        }
        inv
    }

    pub fn all_uris(&self) -> BTreeSet<&str> {
        self.categories.values().flatten().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiveInventory {
    pub inventory: UriInventory,
    /// Some steps were skipped, so the inventory may be incomplete.
    pub partial: bool,
    pub skipped: Vec<StepError>,
}

/// Replays `trace` against the live `url` and collects what its record
/// steps reach, without archiving anything. A discard-mode proxy still
/// supplies the idle signal.
pub async fn live_inventory(
    url: &str,
    trace: &Trace,
    driver: &DriverConfig,
    upstream: &UpstreamTrust,
) -> Result<LiveInventory, LiveError> {
    if !trace.url_pattern.matches(url).unwrap_or(false) {
        return Err(CaptureError::TraceMismatch {
            trace: trace.id.clone(),
            url: url.to_string(),
        }
        .into());
    }
    let run = run_session(
        trace,
        url,
        driver,
        upstream,
        None,
        tracer_warc::Compression::None,
        driver.retries,
    )
    .await?;
    if run.status == PlanStatus::Failed {
        let msg = run
            .report
            .errors
            .first()
            .map(|e| format!("{}: {}", e.kind, e.message))
            .unwrap_or_else(|| "plan failed".into());
        return Err(LiveError::Driver(msg));
    }
    let mut inventory = UriInventory::from_entries(url, &run.report.inventory);
    for label in trace.categories.values() {
        inventory.declare(label);
    }
    Ok(LiveInventory {
        inventory,
        partial: run.status == PlanStatus::Partial || !run.report.skipped.is_empty(),
        skipped: run.report.skipped,
    })
}

/// Target URIs of response records whose HTTP status is in `statuses`.
pub fn warc_inventory(warc: &Path, statuses: &BTreeSet<u16>) -> Result<BTreeSet<String>, QualityError> {
    let mut out = BTreeSet::new();
    for rec in read_records(warc)? {
        let rec = rec?.record;
        if rec.record_type() != Some(RecordType::Response) {
            continue;
        }
        let (Some(uri), Some(status)) = (rec.target_uri(), rec.http_status()) else {
            continue;
        };
        if statuses.contains(&status) {
            out.insert(uri.to_string());
        }
    }
    Ok(out)
}

pub fn default_statuses() -> BTreeSet<u16> {
    BTreeSet::from([200])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryQuality {
    pub expected: usize,
    pub captured: usize,
    pub ratio: f64,
}

impl CategoryQuality {
    pub fn new(expected: usize, captured: usize) -> Self {
        assert!(captured <= expected, "captured {captured} exceeds expected {expected}");
        let ratio = if expected == 0 {
            1.0
        } else {
            captured as f64 / expected as f64
        };
        Self {
            expected,
            captured,
            ratio,
        }
    }

    /// Whether the ratio reaches `percent`, decided on the exact fraction.
    pub fn at_least(&self, percent: u32) -> bool {
        self.expected == 0 || self.captured as u64 * 100 >= percent as u64 * self.expected as u64
    }

    pub fn is_zero(&self) -> bool {
        self.expected > 0 && self.captured == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceQuality {
    pub resource_url: String,
    pub categories: BTreeMap<String, CategoryQuality>,
    /// Over all expected URIs of the resource, regardless of category.
    pub overall: CategoryQuality,
}

impl ResourceQuality {
    pub fn get(&self, category: &str) -> Option<&CategoryQuality> {
        if category == OVERALL {
            Some(&self.overall)
        } else {
            self.categories.get(category)
        }
    }
}

pub fn compare<S: AsRef<str>>(expected: &UriInventory, captured: impl IntoIterator<Item = S>) -> ResourceQuality {
    let captured: BTreeSet<String> = captured.into_iter().map(|u| normalize(u.as_ref())).collect();
    let mut categories = BTreeMap::new();
    let mut all_expected = BTreeSet::new();
    for (label, uris) in &expected.categories {
        let uris: BTreeSet<String> = uris.iter().map(|u| normalize(u)).collect();
        let hit = uris.intersection(&captured).count();
        categories.insert(label.clone(), CategoryQuality::new(uris.len(), hit));
        all_expected.extend(uris);
    }
    let hit = all_expected.intersection(&captured).count();
    ResourceQuality {
        resource_url: expected.resource_url.clone(),
        categories,
        overall: CategoryQuality::new(all_expected.len(), hit),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCell {
    pub threshold: u32,
    /// Percentage of resources, rounded half-up to two decimals.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub label: String,
    pub resources: usize,
    /// Every contributing resource expects at most one URI, so only the 0
    /// and 100 columns carry information.
    pub binary: bool,
    pub cells: Vec<ThresholdCell>,
}

impl ThresholdRow {
    pub fn cell(&self, threshold: u32) -> Option<f64> {
        self.cells.iter().find(|c| c.threshold == threshold).map(|c| c.percent)
    }
}

/// `count / n` as a percentage in hundredths, rounded half-up.
fn percent_hundredths(count: usize, n: usize) -> u64 {
    let (count, n) = (count as u128, n as u128);
    ((count * 10_000 * 2 + n) / (2 * n)) as u64
}

/// One threshold row. For x > 0 a cell is the share of resources whose ratio
/// is at least x percent; the 0 cell is the share whose ratio is exactly 0.
/// Resources without the category are left out.
pub fn aggregate(qualities: &[ResourceQuality], category: &str) -> Result<ThresholdRow, QualityError> {
    let values: Vec<&CategoryQuality> = qualities.iter().filter_map(|q| q.get(category)).collect();
    if values.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    let n = values.len();
    let cells = THRESHOLDS
        .iter()
        .map(|&x| {
            let count = if x == 0 {
                values.iter().filter(|v| v.is_zero()).count()
            } else {
                values.iter().filter(|v| v.at_least(x)).count()
            };
            ThresholdCell {
                threshold: x,
                percent: percent_hundredths(count, n) as f64 / 100.0,
            }
        })
        .collect();
    Ok(ThresholdRow {
        label: category.to_string(),
        resources: n,
        binary: values.iter().all(|v| v.expected <= 1),
        cells,
    })
}

/// Overall row followed by one row per category, alphabetically.
pub fn threshold_table(qualities: &[ResourceQuality]) -> Result<Vec<ThresholdRow>, QualityError> {
    let mut rows = vec![aggregate(qualities, OVERALL)?];
    let labels: BTreeSet<&str> = qualities
        .iter()
        .flat_map(|q| q.categories.keys().map(String::as_str))
        .collect();
    for l in labels {
        rows.push(aggregate(qualities, l)?);
    }
    Ok(rows)
}

/// Plain-text table with thresholds 0..100 across and one row per label.
/// Intermediate cells of binary rows read `n/a`.
pub fn render_table(title: &str, rows: &[ThresholdRow]) -> String {
    let label_w = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(1);
    let mut out = String::new();
    if !title.is_empty() {
        let _ = writeln!(out, "{title}");
    }
    let _ = write!(out, "{:<label_w$} |", "x");
    for t in THRESHOLDS {
        let _ = write!(out, " {t:>6}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}-+-{}", "-".repeat(label_w), "-".repeat(7 * THRESHOLDS.len() - 1));
    for r in rows {
        let _ = write!(out, "{:<label_w$} |", r.label);
        for c in &r.cells {
            if r.binary && c.threshold != 0 && c.threshold != 100 {
                let _ = write!(out, " {:>6}", "n/a");
            } else {
                let _ = write!(out, " {:>6.2}", c.percent);
            }
        }
        out.push('\n');
    }
    out
}
