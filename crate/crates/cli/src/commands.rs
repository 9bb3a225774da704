use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use tracer_core::bench::{baseline_crawl, extract_uris, overhead_csv, overhead_from_totals, CrawlConfig};
use tracer_core::capture::{capture_as, capture_batch, capture_id, CaptureConfig, CaptureResult, CaptureStatus};
use tracer_core::compiler::compile;
use tracer_core::driver::{BackendKind, DriverConfig, PageScript};
use tracer_core::fixture::{deck_trace, repo_trace, serve_on, PortalSpec};
use tracer_core::json::to_canonical;
use tracer_core::proxy::{start_proxy, ProxyConfig};
use tracer_core::quality::{compare, live_inventory, render_table, threshold_table, warc_inventory, ResourceQuality, UriInventory};
use tracer_core::repo::{self, LocalRepository, TraceSet, TraceSource};
use tracer_core::tls::UpstreamTrust;
use tracer_core::trace::{parse_trace, parse_trace_lenient, serialize_trace, validate_trace, Trace, UrlPattern};
use tracer_warc::Compression;

use crate::args::*;
use crate::output::{emit, print_json, write_to};
use crate::{ingest, usage};

pub async fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Trace(c) => trace(c),
        Command::Repo(c) => repo_cmd(c).await,
        Command::Capture(c) => capture_cmd(c).await,
        Command::Quality(c) => quality(c).await,
        Command::Bench(c) => bench(c).await,
        Command::Fixture(c) => fixture(c).await,
        Command::Proxy(a) => proxy(a).await,
        Command::ServeIngest(a) => serve_ingest(a).await,
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_trace(path: &Path) -> Result<Trace> {
    parse_trace(&read(path)?).with_context(|| format!("trace {}", path.display()))
}

fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_slice(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = String::from_utf8(read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn statuses(list: &[u16]) -> BTreeSet<u16> {
    list.iter().copied().collect()
}

fn trace(cmd: TraceCmd) -> Result<bool> {
    match cmd {
        TraceCmd::Validate { file, output } => {
            let bytes = read(&file)?;
            let report = match parse_trace_lenient(&bytes) {
                Ok(t) => validate_trace(&t),
                Err(e) => {
                    let field = e.field().unwrap_or("$").to_string();
                    let finding = json!({"severity": "error", "field": field, "message": e.to_string()});
                    emit(&output, &json!({ "findings": [finding] }), || format!("error {field}: {e}"))?;
                    return Ok(false);
                }
            };
            emit(&output, &report, || {
                if report.is_empty() {
                    return "ok".into();
                }
                report
                    .findings
                    .iter()
                    .map(|f| format!("{:?} {}: {}", f.severity, f.field, f.message).to_lowercase())
                    .collect::<Vec<_>>()
                    .join("\n")
            })?;
            Ok(!report.has_errors())
        }
        TraceCmd::Plan { file, url, output } => {
            let trace = load_trace(&file)?;
            let plan = compile(&trace).map_err(|e| anyhow::anyhow!("{}: {e}", file.display()))?;
            let plan = match url {
                Some(u) => {
                    if !trace.url_pattern.matches(&u).unwrap_or(false) {
                        bail!("{u} does not match {}", trace.url_pattern.as_str());
                    }
                    plan.bind(&u)
                }
                None => plan,
            };
            emit(&output, &plan, || plan.render())?;
            Ok(true)
        }
        TraceCmd::Match {
            url,
            pattern,
            pattern_from,
            output,
        } => {
            let pattern = match (pattern, pattern_from) {
                (Some(p), _) => UrlPattern::new(p),
                (None, Some(f)) => load_trace(&f)?.url_pattern,
                (None, None) => unreachable!("clap requires one pattern source"),
            };
            let m = pattern.matches(&url).map_err(|e| anyhow::anyhow!("{e}"))?;
            emit(
                &output,
                &json!({ "match": m, "pattern": pattern.as_str(), "url": url }),
                || m.to_string(),
            )?;
            Ok(m)
        }
    }
}

async fn repo_cmd(cmd: RepoCmd) -> Result<bool> {
    match cmd {
        RepoCmd::Sync {
            trace_repo,
            cache,
            output,
        } => {
            let report = repo::sync(&trace_repo, &cache.cache).await?;
            emit(&output, &report, || {
                format!(
                    "{} added, {} updated, {} unchanged",
                    report.added.len(),
                    report.updated.len(),
                    report.unchanged
                )
            })?;
            Ok(true)
        }
        RepoCmd::Lookup { url, cache, output } => {
            let hits = repo::lookup(&url, &cache.cache)?;
            emit(&output, &hits, || {
                hits.iter()
                    .map(|r| format!("{} v{}\t{}", r.id, r.version, r.url_pattern))
                    .collect::<Vec<_>>()
                    .join("\n")
            })?;
            Ok(!hits.is_empty())
        }
    }
}

/// Session and trust settings; fails with a usage error before anything runs.
fn driver_config(a: &DriverArgs) -> Result<(DriverConfig, UpstreamTrust)> {
    let mut cfg = DriverConfig::default();
    match a.backend {
        Backend::Mock => {
            let path = a
                .page_script
                .as_ref()
                .ok_or_else(|| usage("the mock backend needs --page-script"))?;
            let script = PageScript::from_json(&read(path)?).with_context(|| format!("page script {}", path.display()))?;
            cfg.page_script = Some(Arc::new(script));
        }
        Backend::Webdriver => {
            let ep = a.webdriver_endpoint.clone().ok_or_else(|| {
                usage("the webdriver backend needs --webdriver-endpoint or TRACER_WEBDRIVER_ENDPOINT")
            })?;
            cfg.backend = BackendKind::Webdriver;
            cfg.webdriver_endpoint = Some(ep);
        }
    }
    if let Some(ua) = &a.user_agent {
        cfg.user_agent = ua.clone();
    }
    let upstream = UpstreamTrust {
        extra_roots_pem: a.ca.iter().map(|p| read(p)).collect::<Result<_>>()?,
        only_extra_roots: a.only_ca,
        insecure: a.insecure,
    };
    Ok((cfg, upstream))
}

fn check_source(s: &SourceArgs) -> Result<()> {
    if s.trace_repo.is_some() && s.cache.is_none() {
        return Err(usage("--trace-repo needs --cache to sync into"));
    }
    Ok(())
}

async fn trace_source(s: SourceArgs) -> Result<Arc<dyn TraceSource>> {
    if !s.trace.is_empty() {
        let traces = s.trace.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>>>()?;
        return Ok(Arc::new(TraceSet(traces)));
    }
    let cache = s.cache.expect("checked by check_source");
    if let Some(remote) = &s.trace_repo {
        repo::sync(remote, &cache).await?;
    }
    Ok(Arc::new(LocalRepository { cache_dir: cache }))
}

fn capture_config(opts: &CaptureOpts, workers: usize) -> Result<CaptureConfig> {
    let (driver, upstream) = driver_config(&opts.driver)?;
    Ok(CaptureConfig {
        out_dir: opts.out.clone(),
        driver,
        upstream,
        compression: if opts.uncompressed {
            Compression::None
        } else {
            Compression::GzipPerRecord
        },
        retries: opts.retries,
        workers,
    })
}

fn summary(results: &[CaptureResult]) -> String {
    let mut s = String::new();
    for r in results {
        let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from));
        let _ = writeln!(
            s,
            "{}\t{}\t{} URIs\t{} ms\t{}",
            status.unwrap_or_default(),
            r.target_url,
            r.inventory.total,
            r.timings.total_ms,
            r.warc_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        );
    }
    s
}

fn print_results<T: serde::Serialize>(value: &T, results: &[CaptureResult], pretty: bool) -> Result<()> {
    if pretty {
        write_to(None, summary(results).as_bytes())
    } else {
        print_json(value)
    }
}

async fn capture_cmd(cmd: CaptureCmd) -> Result<bool> {
    match cmd {
        CaptureCmd::One { url, source, opts } => {
            check_source(&source)?;
            let cfg = capture_config(&opts, 1)?;
            let source = trace_source(source).await?;
            let Some(selected) = source.select(&url)? else {
                bail!("no trace applies to {url}");
            };
            let r = capture_as(&capture_id(&url), &url, &selected.trace, selected.version, &cfg).await?;
            print_results(&r, std::slice::from_ref(&r), opts.pretty)?;
            Ok(r.status != CaptureStatus::Failed)
        }
        CaptureCmd::Batch {
            urls,
            workers,
            source,
            opts,
        } => {
            if workers == 0 {
                return Err(usage("--workers must be at least 1"));
            }
            check_source(&source)?;
            let cfg = capture_config(&opts, workers)?;
            let urls = read_lines(&urls)?;
            let source = trace_source(source).await?;
            let results = capture_batch(&urls, source, &cfg).await;
            print_results(&results, &results, opts.pretty)?;
            Ok(results.iter().all(|r| r.status != CaptureStatus::Failed))
        }
    }
}

/// Accepts a bare inventory or a live-inventory report wrapping one.
fn read_inventory(path: &Path) -> Result<UriInventory> {
    let mut v = read_json(path)?;
    if let Some(inner) = v.get_mut("inventory") {
        v = inner.take();
    }
    serde_json::from_value(v).with_context(|| format!("{} is not an inventory", path.display()))
}

fn read_qualities(paths: &[PathBuf]) -> Result<Vec<ResourceQuality>> {
    let mut out = Vec::new();
    for p in paths {
        match read_json(p)? {
            Value::Array(items) => {
                for v in items {
                    out.push(serde_json::from_value(v).with_context(|| format!("{}", p.display()))?);
                }
            }
            v => out.push(serde_json::from_value(v).with_context(|| format!("{}", p.display()))?),
        }
    }
    Ok(out)
}

async fn quality(cmd: QualityCmd) -> Result<bool> {
    match cmd {
        QualityCmd::LiveInventory {
            url,
            trace,
            driver,
            output,
        } => {
            let (d, u) = driver_config(&driver)?;
            let trace = load_trace(&trace)?;
            let live = live_inventory(&url, &trace, &d, &u).await?;
            emit(&output, &live, || {
                let mut s = String::new();
                for (cat, uris) in &live.inventory.categories {
                    for uri in uris {
                        let _ = writeln!(s, "{cat}\t{uri}");
                    }
                }
                s
            })?;
            Ok(true)
        }
        QualityCmd::WarcInventory {
            warc,
            statuses: st,
            output,
        } => {
            let uris = warc_inventory(&warc, &statuses(&st))?;
            emit(&output, &uris, || uris.iter().cloned().collect::<Vec<_>>().join("\n"))?;
            Ok(true)
        }
        QualityCmd::Compare {
            expected,
            warc,
            statuses: st,
            output,
        } => {
            let inv = read_inventory(&expected)?;
            let captured = warc_inventory(&warc, &statuses(&st))?;
            let q = compare(&inv, &captured);
            emit(&output, &q, || {
                let mut s = format!("{}\n", q.resource_url);
                for (label, c) in std::iter::once(("All", &q.overall)).chain(q.categories.iter().map(|(k, v)| (k.as_str(), v))) {
                    let _ = writeln!(s, "  {label}: {}/{} ({:.2})", c.captured, c.expected, c.ratio);
                }
                s
            })?;
            Ok(true)
        }
        QualityCmd::Aggregate { reports, title, output } => {
            let qs = read_qualities(&reports)?;
            let rows = threshold_table(&qs)?;
            emit(&output, &rows, || render_table(&title, &rows))?;
            Ok(true)
        }
    }
}

async fn bench(cmd: BenchCmd) -> Result<bool> {
    match cmd {
        BenchCmd::Crawl {
            uris,
            warc,
            workers,
            timeout_ms,
            ca,
            output,
        } => {
            let trust = ca.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
            let list = match (uris, warc) {
                (Some(f), _) => read_lines(&f)?,
                (None, Some(w)) => extract_uris(&w)?,
                (None, None) => unreachable!("clap requires one input"),
            };
            let cfg = CrawlConfig {
                workers: workers as usize,
                timeout_ms,
                trust_pem: trust,
                ..CrawlConfig::default()
            };
            let t = baseline_crawl(&list, &cfg).await?;
            emit(&output, &t, || {
                let failed = t.outcomes.iter().filter(|o| o.error.is_some()).count();
                format!("{} URIs, {} workers, {} ms, {failed} failed", t.uris, t.workers, t.total_ms)
            })?;
            Ok(true)
        }
        BenchCmd::Overhead {
            tracer,
            baseline,
            csv,
            output,
        } => {
            if tracer.len() != baseline.len() {
                return Err(usage(format!(
                    "{} --tracer files but {} --baseline files",
                    tracer.len(),
                    baseline.len()
                )));
            }
            let mut rows = Vec::new();
            for (t, b) in tracer.iter().zip(&baseline) {
                let tv = read_json(t)?;
                let bv = read_json(b)?;
                let url = tv["target_url"]
                    .as_str()
                    .with_context(|| format!("{}: no target_url", t.display()))?;
                let tms = tv["timings"]["total_ms"]
                    .as_u64()
                    .with_context(|| format!("{}: no timings.total_ms", t.display()))?;
                let bms = bv["total_ms"]
                    .as_u64()
                    .with_context(|| format!("{}: no total_ms", b.display()))?;
                rows.push((url.to_string(), tms, bms));
            }
            let report = overhead_from_totals(&rows);
            if csv {
                write_to(output.out.as_deref(), overhead_csv(&report)?.as_bytes())?;
            } else {
                emit(&output, &report, || {
                    let slow = report.slowdown.map_or("n/a".to_string(), |s| format!("{s:.2}x"));
                    format!(
                        "{} resources, mean delta {:.2} s, slowdown {slow}",
                        report.rows.len(),
                        report.mean_delta_ms / 1000.0
                    )
                })?;
            }
            Ok(true)
        }
    }
}

async fn fixture(cmd: FixtureCmd) -> Result<bool> {
    let FixtureCmd::Serve {
        spec,
        port,
        bind,
        script_out,
        ca_out,
        traces_out,
    } = cmd;
    let spec = PortalSpec::from_json(&read(&spec)?)?;
    let portal = serve_on(spec, bind, port).await?;
    if let Some(p) = &script_out {
        std::fs::write(p, to_canonical(&portal.page_script())?).with_context(|| format!("writing {}", p.display()))?;
    }
    if let (Some(p), Some(pem)) = (&ca_out, portal.ca_pem()) {
        std::fs::write(p, pem).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(dir) = &traces_out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("repo.trace.json"), serialize_trace(&repo_trace(portal.base_url(), 200)))?;
        std::fs::write(dir.join("deck.trace.json"), serialize_trace(&deck_trace(portal.base_url(), 200)))?;
    }
    print_json(&json!({
        "base_url": portal.base_url(),
        "repos": portal.spec().repos.iter().map(|r| portal.repo_url(&r.name)).collect::<Vec<_>>(),
        "decks": portal.spec().decks.iter().map(|d| portal.deck_url(&d.name)).collect::<Vec<_>>(),
    }))?;
    tokio::signal::ctrl_c().await?;
    portal.stop().await;
    Ok(true)
}

async fn proxy(a: ProxyArgs) -> Result<bool> {
    let upstream = UpstreamTrust {
        extra_roots_pem: a.ca.iter().map(|p| read(p)).collect::<Result<_>>()?,
        only_extra_roots: false,
        insecure: a.insecure,
    };
    let handle = start_proxy(ProxyConfig {
        bind: a.bind,
        port: a.port,
        warc_output: Some(a.warc_out.clone()),
        compression: if a.uncompressed {
            Compression::None
        } else {
            Compression::GzipPerRecord
        },
        ca_out: a.ca_out.clone(),
        upstream,
        ..ProxyConfig::default()
    })
    .await?;
    print_json(&json!({ "endpoint": handle.endpoint(), "warc": a.warc_out, "ca": a.ca_out }))?;
    tokio::signal::ctrl_c().await?;
    let log = handle.stop().await;
    print_json(&log)?;
    Ok(true)
}

async fn serve_ingest(a: IngestArgs) -> Result<bool> {
    std::fs::create_dir_all(&a.repo).with_context(|| format!("creating {}", a.repo.display()))?;
    let listener = ingest::bind(SocketAddr::new(a.bind, a.port)).await?;
    print_json(&json!({ "listening": format!("http://{}", listener.local_addr()?), "repo": a.repo }))?;
    ingest::serve(listener, a.repo, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(true)
}
