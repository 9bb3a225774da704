//! Acceptance suite: one PASS/FAIL line per criterion, each under a time
//! budget. Runs with the mock browser backend; the real-browser comparison
//! runs only when TRACER_WEBDRIVER_ENDPOINT is set.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::pin::Pin;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use tracer_core::bench::{baseline_crawl, extract_uris, overhead_report, CrawlConfig};
use tracer_core::capture::{capture, capture_batch, CaptureConfig, CaptureStatus};
use tracer_core::compiler::compile;
use tracer_core::driver::mock::browser_client;
use tracer_core::driver::script::{PageScript, ScriptElement};
use tracer_core::driver::{open_session, BackendKind, DriverConfig, PlanStatus};
use tracer_core::fixture::{deck_trace, repo_trace, serve, DeckSpec, PortalHandle, PortalSpec, RepoSpec};
use tracer_core::proxy::{start_proxy, Disposition, IdleTracker, ProxyConfig};
use tracer_core::quality::{
    compare, default_statuses, live_inventory, render_table, threshold_table, warc_inventory, CategoryQuality,
    ResourceQuality, UriInventory, OVERALL, THRESHOLDS,
};
use tracer_core::repo::TraceSet;
use tracer_core::tls::UpstreamTrust;
use tracer_core::trace::{parse_trace, serialize_trace, Trace};
use tracer_warc::{
    build_cdxj, payload_digest, read_all, read_record_at, Compression, RecordType, WarcError, WarcReader, WarcRecord,
    WarcWriter,
};

type Outcome = Result<String, String>;
type Check = fn() -> Pin<Box<dyn Future<Output = Outcome>>>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Converts any displayable error into a failure reason.
fn e<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|err| err.to_string())
}

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: Check,
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion {
            name: "trace-conformance",
            budget: Duration::from_secs(1),
            check: || Box::pin(trace_conformance()),
        },
        Criterion {
            name: "class-level-reuse",
            budget: Duration::from_secs(120),
            check: || Box::pin(class_level_reuse()),
        },
        Criterion {
            name: "warc-conformance",
            budget: Duration::from_secs(10),
            check: || Box::pin(warc_conformance()),
        },
        Criterion {
            name: "proxy-completeness",
            budget: Duration::from_secs(60),
            check: || Box::pin(proxy_completeness()),
        },
        Criterion {
            name: "repeat-click-semantics",
            budget: Duration::from_secs(60),
            check: || Box::pin(repeat_click_semantics()),
        },
        Criterion {
            name: "threshold-aggregation-oracle",
            budget: Duration::from_secs(5),
            check: || Box::pin(threshold_oracle()),
        },
        Criterion {
            name: "overhead-harness",
            budget: Duration::from_secs(120),
            check: || Box::pin(overhead_harness()),
        },
        Criterion {
            name: "mock-real-equivalence",
            budget: Duration::from_secs(300),
            check: || Box::pin(mock_real_equivalence()),
        },
    ];
    let runtime = tokio::runtime::Runtime::new().expect("runtime");
    let mut failed = 0;
    println!();
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let outcome = runtime.block_on((c.check)());
        let took = start.elapsed();
        let verdict = match outcome {
            Ok(d) if d.starts_with("skipped:") => Verdict::Skip(d),
            Ok(d) if took > c.budget => Verdict::Fail(format!("{d}; over budget of {:?}", c.budget)),
            Ok(d) => Verdict::Pass(d),
            Err(r) => Verdict::Fail(r),
        };
        let secs = took.as_secs_f64();
        match verdict {
            Verdict::Pass(d) => println!("PASS {:<30} {secs:>7.2}s  {d}", c.name),
            Verdict::Skip(d) => println!("SKIP {:<30} {secs:>7.2}s  {d}", c.name),
            Verdict::Fail(r) => {
                failed += 1;
                println!("FAIL {:<30} {secs:>7.2}s  {r}", c.name);
            }
        }
    }
    println!();
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn files_in(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, String> {
    let mut out: Vec<PathBuf> = e(std::fs::read_dir(dir))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    out.sort();
    Ok(out)
}

async fn trace_conformance() -> Outcome {
    let dir = corpus_dir().join("traces");
    let sums: BTreeMap<String, String> = e(std::fs::read_to_string(dir.join("SHA256SUMS")))?
        .lines()
        .filter_map(|l| l.split_once("  ").map(|(h, n)| (n.to_string(), h.to_string())))
        .collect();
    let files = files_in(&dir, ".trace.json")?;
    ensure!(files.len() == 20, "corpus has {} traces, expected 20", files.len());
    let mut canonical = BTreeMap::new();
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().to_string();
        let bytes = e(std::fs::read(f))?;
        let t = parse_trace(&bytes).map_err(|err| format!("{name}: {err}"))?;
        let out = serialize_trace(&t);
        ensure!(out == bytes, "{name}: serialization differs from the file");
        ensure!(serialize_trace(&t) == out, "{name}: serialization is not deterministic");
        let back = parse_trace(&out).map_err(|err| format!("{name}: reparse: {err}"))?;
        ensure!(back == t, "{name}: parse after serialize changed the trace");
        let digest = hex::encode(Sha256::digest(&out));
        ensure!(sums.get(&name) == Some(&digest), "{name}: canonical bytes do not match the golden digest");
        canonical.insert(t.id.clone(), out);
    }
    let variants = files_in(&corpus_dir().join("variants"), ".json")?;
    for v in &variants {
        let name = v.file_name().unwrap().to_string_lossy().to_string();
        let id = name.split('.').next().unwrap();
        let t = parse_trace(&e(std::fs::read(v))?).map_err(|err| format!("{name}: {err}"))?;
        ensure!(
            canonical.get(id) == Some(&serialize_trace(&t)),
            "{name}: not canonicalized to {id}.trace.json"
        );
    }
    Ok(format!("{} traces round-trip byte-identically; {} variants canonicalize", files.len(), variants.len()))
}

fn mock_driver(portal: &PortalHandle) -> DriverConfig {
    DriverConfig {
        page_script: Some(Arc::new(portal.page_script())),
        ..DriverConfig::default()
    }
}

fn portal_trust(portal: &PortalHandle) -> UpstreamTrust {
    UpstreamTrust {
        extra_roots_pem: vec![portal.ca_pem().unwrap().as_bytes().to_vec()],
        only_extra_roots: true,
        insecure: false,
    }
}

fn capture_config(portal: &PortalHandle, out: &Path, workers: usize) -> CaptureConfig {
    CaptureConfig {
        out_dir: out.to_path_buf(),
        driver: mock_driver(portal),
        upstream: portal_trust(portal),
        workers,
        ..CaptureConfig::default()
    }
}

/// The URIs of interest a page must expose, derived from the portal spec
/// alone.
fn ground_truth(portal: &PortalHandle, url: &str) -> UriInventory {
    let mut inv = UriInventory::new(url);
    let spec = portal.spec();
    if let Some(r) = spec.repos.iter().find(|r| portal.repo_url(&r.name) == url) {
        inv.declare("files");
        inv.declare("zip");
        for i in 1..=r.file_count {
            inv.insert("files", &portal.url(&format!("/repo/{}/blob/file-{i}.txt", r.name)));
        }
        if r.with_zip {
            inv.insert("zip", &portal.url(&format!("/repo/{}/archive.zip", r.name)));
        }
    }
    if let Some(d) = spec.decks.iter().find(|d| portal.deck_url(&d.name) == url) {
        inv.declare("notes");
        inv.declare("slides");
        for k in 1..=d.note_count {
            inv.insert("notes", &portal.url(&format!("/deck/{}/notes/{k}", d.name)));
        }
        for k in 1..=d.slide_count {
            inv.insert("slides", &portal.url(&format!("/deck/{}/slide/{k}", d.name)));
        }
    }
    inv
}

async fn class_level_reuse() -> Outcome {
    let spec = PortalSpec {
        repos: (0..25u32)
            .map(|i| RepoSpec {
                name: format!("repo-{i}"),
                file_count: i * 20 / 24,
                with_zip: i % 2 == 0,
            })
            .collect(),
        decks: (0..25u32)
            .map(|i| DeckSpec {
                name: format!("deck-{i}"),
                slide_count: 1 + i * 29 / 24,
                note_count: i % 6,
                dynamic: i % 2 == 1,
            })
            .collect(),
        ..PortalSpec::default()
    };
    let portal = e(serve(spec, 0).await)?;
    let out = e(tempfile::tempdir())?;
    let traces = TraceSet(vec![repo_trace(portal.base_url(), 0), deck_trace(portal.base_url(), 0)]);
    let mut urls: Vec<String> = portal.spec().repos.iter().map(|r| portal.repo_url(&r.name)).collect();
    urls.extend(portal.spec().decks.iter().map(|d| portal.deck_url(&d.name)));
    let results = capture_batch(&urls, Arc::new(traces), &capture_config(&portal, out.path(), 8)).await;
    ensure!(results.len() == 50, "{} results for 50 pages", results.len());

    let mut qualities = Vec::new();
    for (url, r) in urls.iter().zip(&results) {
        ensure!(&r.target_url == url, "result order differs at {url}");
        ensure!(r.status != CaptureStatus::Failed, "{url} failed: {:?}", r.errors);
        let truth = ground_truth(&portal, url);
        ensure!(r.inventory == truth, "{url}: trace reached {} URIs, page has {}", r.inventory.total, truth.total);
        let warc = r.warc_path.as_ref().ok_or(format!("{url}: no WARC"))?;
        let captured = e(warc_inventory(warc, &default_statuses()))?;
        let q = compare(&truth, &captured);
        ensure!(q.overall.ratio == 1.0, "{url}: overall ratio {}", q.overall.ratio);
        let zip_off = portal.spec().repos.iter().any(|p| !p.with_zip && portal.repo_url(&p.name) == *url);
        if zip_off {
            ensure!(
                r.status == CaptureStatus::Partial && !r.skipped.is_empty(),
                "{url}: missing ZIP link not handled as a skip"
            );
        }
        qualities.push(q);
    }
    let table = e(threshold_table(&qualities))?;
    let all = &table[0];
    ensure!(all.label == OVERALL && all.cell(100) == Some(100.0), "overall row at 100% is {:?}", all.cell(100));
    ensure!(all.cell(0) == Some(0.0), "some page has zero availability");
    let uris: usize = results.iter().map(|r| r.inventory.total).sum();
    portal.stop().await;
    Ok(format!("50 pages, 2 traces, {uris} URIs of interest, every page at ratio 1.0"))
}

fn http_response(body: &[u8]) -> Vec<u8> {
    let mut b = format!("HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\n\r\n", body.len()).into_bytes();
    b.extend_from_slice(body);
    b
}

/// Payload digests computed independently with Python's hashlib and
/// base64.b32encode.
fn digest_oracle() -> Vec<(Vec<u8>, &'static str)> {
    vec![
        (b"".to_vec(), "sha1:3I42H3S6NNFQ2MSVX7XZKYAYSCX5QBYJ"),
        (b"abc".to_vec(), "sha1:VGMT4NSHA2AWVOR6EVYXQUGCNSONBWE5"),
        (b"hello world".to_vec(), "sha1:FKXGYNOJJ7H3IFO35FPUBC445EPOQRXN"),
        (b"\x00".to_vec(), "sha1:LOUTZHNQZ74T6UVVEHLUEDSD63W2E6CP"),
        (b"\xff\xff\xff".to_vec(), "sha1:PBTQ5CFJYLDRCESEOHJPESUNXSGOLW5J"),
        (b"The quick brown fox jumps over the lazy dog".to_vec(), "sha1:F7KODRT2FUUPZ3MET3Q3W5XHHENZH2YS"),
        (b"<html><body>x</body></html>\n".to_vec(), "sha1:IU2Y5K3LR4KI5LKCPO5JZIKVJP7ACGKW"),
        (b"\r\n\r\n".to_vec(), "sha1:M2JI43F3LHB2HPHGA2KZ55FIMX7AJZSC"),
        (vec![b'a'; 1000], "sha1:FEPJU3DGTFEUTNL3UXTFANQ6TD6DNMN2"),
        ((0..=255u8).collect(), "sha1:JELNNPNX66HGQA3JRSVTFUKYN2SFPX6I"),
    ]
}

async fn warc_conformance() -> Outcome {
    let oracle = digest_oracle();
    for (payload, want) in &oracle {
        ensure!(payload_digest(payload) == *want, "digest of {} bytes is {}", payload.len(), payload_digest(payload));
    }

    let mut records = vec![WarcRecord::builder(RecordType::Warcinfo)
        .block(&b"software: acceptance\r\n"[..])
        .build()];
    for (i, (payload, want)) in oracle.iter().enumerate() {
        let resp = WarcRecord::builder(RecordType::Response)
            .target_uri(format!("http://example.com/p{i}"))
            .block(http_response(payload))
            .build();
        ensure!(resp.payload_digest() == Some(*want), "record payload digest {:?} for p{i}", resp.payload_digest());
        let req = WarcRecord::builder(RecordType::Request)
            .target_uri(format!("http://example.com/p{i}"))
            .concurrent_to(resp.record_id().unwrap())
            .block(format!("GET /p{i} HTTP/1.1\r\nHost: example.com\r\n\r\n").into_bytes())
            .build();
        records.push(req);
        records.push(resp);
    }

    let mut w = WarcWriter::new(Vec::new(), Compression::None);
    let mut locations = Vec::new();
    for r in &records {
        locations.push(e(w.write_record(r))?);
    }
    let plain = e(w.into_inner())?;
    let read: Vec<_> = e(WarcReader::new(&plain[..]).collect::<Result<Vec<_>, _>>())?;
    ensure!(read.len() == records.len(), "read {} of {} records", read.len(), records.len());
    let again: Vec<u8> = read.iter().flat_map(|r| r.record.to_bytes()).collect();
    ensure!(again == plain, "plain-mode rewrite is not byte-identical");

    // Every single-byte flip inside a response block is reported.
    let target = 2;
    let loc = locations[target];
    let start = loc.offset as usize + records[target].header_bytes().len();
    let mut flips = 0;
    for i in start..start + records[target].block().len() {
        let mut damaged = plain.clone();
        damaged[i] ^= 0x04;
        let hit = WarcReader::new(&damaged[..]).any(|r| matches!(r, Err(WarcError::CorruptRecord { offset, .. }) if offset == loc.offset));
        ensure!(hit, "corruption at byte {i} went unnoticed");
        flips += 1;
    }

    let dir = e(tempfile::tempdir())?;
    let mut resolved = 0;
    for mode in [Compression::None, Compression::GzipPerRecord] {
        let path = dir.path().join("c.warc.gz");
        let mut w = e(WarcWriter::create(&path, mode))?;
        for r in &records {
            e(w.write_record(r))?;
        }
        e(w.flush())?;
        drop(w);
        let lines = e(build_cdxj(&path))?;
        ensure!(lines.len() == oracle.len(), "{} index lines", lines.len());
        for l in &lines {
            let rec = e(read_record_at(&path, l.offset(), l.length()))?;
            ensure!(rec.target_uri() == Some(l.url.as_str()), "offset {} resolves to another record", l.offset());
            ensure!(
                rec.payload_digest().and_then(|d| d.strip_prefix("sha1:")) == Some(l.digest.as_str()),
                "index digest differs for {}",
                l.url
            );
            resolved += 1;
        }
    }
    Ok(format!(
        "{} records byte-identical, {flips}/{flips} corruptions caught, {resolved} offsets resolve, 10/10 digests match",
        records.len()
    ))
}

async fn proxy_completeness() -> Outcome {
    let portal = e(serve(
        PortalSpec {
            repos: vec![RepoSpec {
                name: "r".into(),
                file_count: 50,
                with_zip: true,
            }],
            ..PortalSpec::default()
        },
        0,
    )
    .await)?;
    let dir = e(tempfile::tempdir())?;
    let warc = dir.path().join("p.warc.gz");
    let proxy = e(start_proxy(ProxyConfig {
        warc_output: Some(warc.clone()),
        upstream: portal_trust(&portal),
        ..ProxyConfig::default()
    })
    .await)?;
    let client = e(browser_client(&DriverConfig {
        proxy_endpoint: Some(proxy.endpoint()),
        trust_pem: vec![proxy.ca_pem().as_bytes().to_vec()],
        ..DriverConfig::default()
    }))?;
    let urls: Vec<String> = (1..=50).map(|i| portal.url(&format!("/repo/r/blob/file-{i}.txt"))).collect();
    for u in urls.iter().chain(std::iter::once(&urls[7])) {
        let resp = e(client.get(u).send().await)?;
        ensure!(resp.status().as_u16() == 200, "{u}: status {}", resp.status());
        e(resp.bytes().await)?;
    }
    let log = proxy.stop().await;
    let recs: Vec<WarcRecord> = e(read_all(&warc))?.into_iter().map(|r| r.record).collect();
    let count = |t| recs.iter().filter(|r| r.record_type() == Some(t)).count();
    ensure!(count(RecordType::Warcinfo) == 1, "{} warcinfo records", count(RecordType::Warcinfo));
    ensure!(count(RecordType::Response) == 50, "{} response records", count(RecordType::Response));
    ensure!(count(RecordType::Request) == 50, "{} request records", count(RecordType::Request));
    ensure!(recs.len() == 101, "{} records in total", recs.len());
    let responses: HashSet<&str> = recs
        .iter()
        .filter(|r| r.record_type() == Some(RecordType::Response))
        .filter_map(|r| r.record_id())
        .collect();
    ensure!(
        recs.iter()
            .filter(|r| r.record_type() == Some(RecordType::Request))
            .all(|r| r.concurrent_to().is_some_and(|id| responses.contains(id))),
        "a request record is not linked to a response"
    );
    ensure!(log.count(Disposition::DuplicateSkipped) == 1, "duplicate re-fetch was not skipped");

    let quiet = 500;
    let t = IdleTracker::new();
    t.begin_at(100);
    ensure!(!t.state_at(10_000, quiet).idle, "idle while an exchange is open");
    t.end_at(250);
    ensure!(!t.state_at(250 + quiet - 1, quiet).idle, "idle before the quiet period elapsed");
    ensure!(t.state_at(250 + quiet, quiet).idle, "not idle at exactly quiet_ms");
    portal.stop().await;
    Ok("50 responses + 50 linked requests + 1 warcinfo; duplicate skipped; idle exactly at quiet_ms".into())
}

fn find_by_id<'a>(els: &'a [ScriptElement], id: &str) -> Option<&'a ScriptElement> {
    els.iter()
        .find_map(|el| if el.id.as_deref() == Some(id) { Some(el) } else { find_by_id(&el.children, id) })
}

/// Clicks a repeat-click makes, by walking the page script's transition
/// table: follow `#id` while it exists and is enabled, at most `max` times.
fn oracle_clicks(script: &PageScript, start: &str, id: &str, max: u32) -> u32 {
    let mut url = start.to_string();
    let mut clicks = 0;
    while clicks < max {
        let Some(el) = script.pages.get(&url).and_then(|p| find_by_id(&p.elements, id)) else {
            break;
        };
        if el.disabled {
            break;
        }
        let Some(next) = el.href.clone().or_else(|| el.on_click.as_ref().and_then(|t| t.navigate.clone())) else {
            break;
        };
        clicks += 1;
        url = reqwest::Url::parse(&url).unwrap().join(&next).unwrap().to_string();
    }
    clicks
}

fn pager_trace(until: &str, max: Option<u32>) -> Trace {
    let max = max.map(|m| format!(r#", "max_iterations": {m}"#)).unwrap_or_default();
    let doc = format!(
        r#"{{"trace_version": "1.0", "id": "pager", "url_pattern": "https://127.0.0.1:*/deck/**",
            "actions": [{{"kind": "repeat-click", "selector": {{"strategy": "element-id", "value": "next"}},
                          "until": "{until}"{max}, "wait_after_ms": 0}}],
            "categories": {{"0": "slides"}},
            "provenance": {{"created_on": "https://127.0.0.1/deck/a/slide/1", "user_agent": "acceptance",
                            "created_at": "2026-01-01T00:00:00Z"}}}}"#
    );
    parse_trace(doc.as_bytes()).expect("pager trace")
}

async fn repeat_click_semantics() -> Outcome {
    let mut report = Vec::new();
    for dynamic in [false, true] {
        let portal = e(serve(
            PortalSpec {
                decks: vec![DeckSpec {
                    name: "a".into(),
                    slide_count: 10,
                    note_count: 0,
                    dynamic,
                }],
                ..PortalSpec::default()
            },
            0,
        )
        .await)?;
        let start = portal.url("/deck/a/slide/1");
        let script = portal.page_script();
        for (until, max) in [("element-disabled", None), ("max-only", Some(5)), ("element-disabled", Some(5))] {
            let expected = oracle_clicks(&script, &start, "next", max.unwrap_or(1000));
            let plan = compile(&pager_trace(until, max)).map_err(|err| err.to_string())?.bind(&start);
            let cfg = DriverConfig {
                trust_pem: vec![portal.ca_pem().unwrap().as_bytes().to_vec()],
                ..mock_driver(&portal)
            };
            let mut session = e(open_session(&cfg, None).await)?;
            let status = session.execute_plan(&plan).await;
            let r = session.close_session().await;
            ensure!(status == PlanStatus::Ok, "{until}/{max:?}: plan {status:?}");
            ensure!(
                r.clicks == expected as u64,
                "{until}/{max:?} dynamic={dynamic}: {} clicks, oracle says {expected}",
                r.clicks
            );
            report.push(r.clicks);
        }
        portal.stop().await;
    }
    ensure!(report == [9, 5, 5, 9, 5, 5], "click counts {report:?}, expected 9/5/5 per variant");
    Ok("10-slide deck: 9 clicks until disabled, 5 with max_iterations=5 (static and scripted)".into())
}

fn random_quality(rng: &mut StdRng, i: usize) -> ResourceQuality {
    let mut cq = |max_expected: usize| {
        let expected = match rng.random_range(0..6) {
            0 => 0,
            1 => max_expected,
            _ => rng.random_range(1..=max_expected),
        };
        let captured = match rng.random_range(0..4) {
            0 => 0,
            1 => expected,
            _ => rng.random_range(0..=expected),
        };
        (expected, captured)
    };
    let (fe, fc) = cq(40);
    let (ze, zc) = cq(1);
    let mut categories = BTreeMap::new();
    categories.insert("files".to_string(), CategoryQuality::new(fe, fc));
    if i % 3 != 0 {
        categories.insert("zip".to_string(), CategoryQuality::new(ze, zc));
    } else {
        return ResourceQuality {
            resource_url: format!("https://h/{i}"),
            categories,
            overall: CategoryQuality::new(fe, fc),
        };
    }
    ResourceQuality {
        resource_url: format!("https://h/{i}"),
        categories,
        overall: CategoryQuality::new(fe + ze, fc + zc),
    }
}

/// Percentage `count / n` rendered with two decimals, half-up, by long
/// division to three decimals.
fn oracle_percent(count: usize, n: usize) -> String {
    let thousandths = count * 100_000 / n;
    let hundredths = thousandths / 10 + usize::from(thousandths % 10 >= 5);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Brute force: walk every resource for every threshold.
fn oracle_row(qs: &[ResourceQuality], label: &str) -> Vec<String> {
    let values: Vec<&CategoryQuality> = qs
        .iter()
        .filter_map(|q| if label == OVERALL { Some(&q.overall) } else { q.categories.get(label) })
        .collect();
    THRESHOLDS
        .iter()
        .map(|&x| {
            let mut count = 0;
            for v in &values {
                let hit = if x == 0 {
                    v.expected > 0 && v.captured == 0
                } else {
                    // Smallest capture count that reaches x percent.
                    let needed = (x as usize * v.expected).div_ceil(100);
                    v.captured >= needed
                };
                count += usize::from(hit);
            }
            oracle_percent(count, values.len())
        })
        .collect()
}

async fn threshold_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x7ab1e1);
    let qs: Vec<ResourceQuality> = (0..200).map(|i| random_quality(&mut rng, i)).collect();
    let table = e(threshold_table(&qs))?;
    let labels: Vec<&str> = table.iter().map(|r| r.label.as_str()).collect();
    ensure!(labels == [OVERALL, "files", "zip"], "rows {labels:?}");
    for row in &table {
        let got: Vec<String> = row.cells.iter().map(|c| format!("{:.2}", c.percent)).collect();
        let want = oracle_row(&qs, &row.label);
        ensure!(got == want, "{} row {got:?} differs from brute force {want:?}", row.label);
    }
    ensure!(table[2].binary && !table[1].binary, "binary flags wrong");
    let rendered = render_table("oracle", &table);
    ensure!(rendered.lines().count() == 2 + 1 + table.len(), "rendered table has wrong shape");

    for list in 0..1000 {
        let n = rng.random_range(1..60);
        let qs: Vec<ResourceQuality> = (0..n).map(|i| random_quality(&mut rng, i)).collect();
        for row in e(threshold_table(&qs))? {
            let p: Vec<f64> = row.cells.iter().map(|c| c.percent).collect();
            ensure!(p.iter().all(|v| (0.0..=100.0).contains(v)), "list {list}: percentage out of range");
            ensure!(p[1..].windows(2).all(|w| w[0] >= w[1]), "list {list}: {} row not monotone: {p:?}", row.label);
            ensure!(p[0] + p[1] <= 100.01, "list {list}: zero and >=10% shares overlap in {}", row.label);
        }
    }
    Ok("200 qualities match brute force on all 33 cells; monotone on 1000 lists".into())
}

async fn overhead_harness() -> Outcome {
    let portal = e(serve(
        PortalSpec {
            repos: (0..3)
                .map(|i| RepoSpec {
                    name: format!("r{i}"),
                    file_count: 4,
                    with_zip: true,
                })
                .chain(std::iter::once(RepoSpec {
                    name: "wide".into(),
                    file_count: 48,
                    with_zip: false,
                }))
                .collect(),
            default_delay_ms: 50,
            ..PortalSpec::default()
        },
        0,
    )
    .await)?;
    let dir = e(tempfile::tempdir())?;
    let cfg = capture_config(&portal, dir.path(), 1);
    let trace = repo_trace(portal.base_url(), 0);
    let trust = vec![portal.ca_pem().unwrap().as_bytes().to_vec()];
    let crawl = |workers| CrawlConfig {
        workers,
        trust_pem: trust.clone(),
        ..CrawlConfig::default()
    };
    let mut tracer = Vec::new();
    let mut baseline = Vec::new();
    for i in 0..3 {
        let r = e(capture(&portal.repo_url(&format!("r{i}")), &trace, &cfg).await)?;
        ensure!(r.status == CaptureStatus::Ok, "capture r{i}: {:?}", r.status);
        let uris = e(extract_uris(r.warc_path.as_ref().unwrap()))?;
        baseline.push(e(baseline_crawl(&uris, &crawl(16)).await)?);
        tracer.push(r);
    }
    let report = e(overhead_report(&tracer, &baseline))?;
    let tracer_total: u64 = report.rows.iter().map(|r| r.tracer_ms).sum();
    let baseline_total: u64 = report.rows.iter().map(|r| r.baseline_ms).sum();
    ensure!(tracer_total > baseline_total, "tracer {tracer_total} ms vs baseline {baseline_total} ms");
    ensure!(report.rows.iter().all(|r| r.delta_ms > 0), "non-positive delta: {:?}", report.rows);

    // Concurrency bound, observed by the server.
    let stats_client = e(reqwest::Client::builder()
        .tls_certs_only(e(reqwest::Certificate::from_pem_bundle(&trust[0]))?)
        .no_proxy()
        .build())?;
    e(stats_client.post(portal.url("/__stats/reset")).send().await)?;
    let wide: Vec<String> = (1..=48).map(|i| portal.url(&format!("/repo/wide/blob/file-{i}.txt"))).collect();
    let t = e(baseline_crawl(&wide, &crawl(16)).await)?;
    ensure!(t.outcomes.iter().all(|o| o.status == Some(200)), "baseline fetch failed");
    let stats: serde_json::Value = e(e(stats_client.get(portal.url("/__stats")).send().await)?.json().await)?;
    let max = stats["max_concurrency"].as_u64().unwrap_or(u64::MAX);
    ensure!(max <= 16, "max concurrency {max} with 16 workers");
    ensure!(stats["total_hits"] == 48, "baseline hit count {}", stats["total_hits"]);
    portal.stop().await;
    Ok(format!(
        "3 resources, mean delta {:.0} ms, slowdown {:.2}x; 48 URIs at max concurrency {max}",
        report.mean_delta_ms,
        report.slowdown.unwrap_or(0.0)
    ))
}

async fn mock_real_equivalence() -> Outcome {
    let Some(endpoint) = std::env::var("TRACER_WEBDRIVER_ENDPOINT").ok().filter(|s| !s.is_empty()) else {
        return Ok("skipped: set TRACER_WEBDRIVER_ENDPOINT to compare against a real browser".into());
    };
    let portal = e(serve(
        PortalSpec {
            repos: vec![
                RepoSpec {
                    name: "a".into(),
                    file_count: 3,
                    with_zip: true,
                },
                RepoSpec {
                    name: "b".into(),
                    file_count: 7,
                    with_zip: false,
                },
                RepoSpec {
                    name: "c".into(),
                    file_count: 0,
                    with_zip: true,
                },
            ],
            decks: vec![
                DeckSpec {
                    name: "s".into(),
                    slide_count: 6,
                    note_count: 2,
                    dynamic: false,
                },
                DeckSpec {
                    name: "d".into(),
                    slide_count: 5,
                    note_count: 1,
                    dynamic: true,
                },
            ],
            ..PortalSpec::default()
        },
        0,
    )
    .await)?;
    let real = DriverConfig {
        backend: BackendKind::Webdriver,
        webdriver_endpoint: Some(endpoint),
        ..DriverConfig::default()
    };
    let pages = [
        (portal.repo_url("a"), repo_trace(portal.base_url(), 500)),
        (portal.repo_url("b"), repo_trace(portal.base_url(), 500)),
        (portal.repo_url("c"), repo_trace(portal.base_url(), 500)),
        (portal.deck_url("s"), deck_trace(portal.base_url(), 500)),
        (portal.deck_url("d"), deck_trace(portal.base_url(), 500)),
    ];
    for (url, trace) in &pages {
        let mock = e(live_inventory(url, trace, &mock_driver(&portal), &portal_trust(&portal)).await)?;
        let browser = e(live_inventory(url, trace, &real, &portal_trust(&portal)).await)?;
        let (m, b): (BTreeSet<&str>, BTreeSet<&str>) = (mock.inventory.all_uris(), browser.inventory.all_uris());
        ensure!(m == b, "{url}: mock {m:?} vs browser {b:?}");
    }
    portal.stop().await;
    Ok("5 fixture pages give identical inventories".into())
}
