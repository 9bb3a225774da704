//! Deterministic local portal with two page classes, repositories and
//! slide decks, each rendered from a single template. End-to-end tests
//! capture it instead of live third-party sites.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::DateTime;
use hyper_util::rt::TokioIo;
use hyper_util::service::TowerToHyperService;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio_rustls::TlsAcceptor;

use crate::driver::script::{PageScript, ScriptElement, ScriptPage, Transition, TransitionMode};
use crate::tls::{CaError, CertAuthority};
use crate::trace::{Provenance, Selector, Trace, TraceAction, Until, UrlPattern};

#[derive(Debug, Error)]
pub enum PortalError {
    #[error("cannot bind portal listener: {0}")]
    Bind(std::io::Error),
    #[error(transparent)]
    Ca(#[from] CaError),
    #[error("invalid portal spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSpec {
    pub name: String,
    pub file_count: u32,
    #[serde(default = "yes")]
    pub with_zip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeckSpec {
    pub name: String,
    pub slide_count: u32,
    #[serde(default)]
    pub note_count: u32,
    /// Paginate by scripted in-page updates instead of links.
    #[serde(default)]
    pub dynamic: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortalSpec {
    #[serde(default)]
    pub repos: Vec<RepoSpec>,
    #[serde(default)]
    pub decks: Vec<DeckSpec>,
    /// Artificial latency per request path, e.g. `"/repo/a": 50`.
    #[serde(default)]
    pub delay_ms: BTreeMap<String, u64>,
    /// Latency for every path without its own entry.
    #[serde(default)]
    pub default_delay_ms: u64,
    /// Give every page a stylesheet sub-resource.
    #[serde(default)]
    pub with_assets: bool,
    #[serde(default = "yes")]
    pub tls: bool,
}

impl Default for PortalSpec {
    fn default() -> Self {
        Self {
            repos: Vec::new(),
            decks: Vec::new(),
            delay_ms: BTreeMap::new(),
            default_delay_ms: 0,
            with_assets: false,
            tls: true,
        }
    }
}

pub const STYLESHEET: &str = "/res/site.css";

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const DYNAMIC_NEXT: &str = r#"<script>
function wireNext() {
  var b = document.getElementById('next');
  if (!b || b.disabled || !b.dataset.next) return;
  b.addEventListener('click', function () {
    var u = b.dataset.next;
    fetch(u).then(function (r) { return r.text(); }).then(function (t) {
      var d = new DOMParser().parseFromString(t, 'text/html');
      document.getElementById('slide').replaceWith(d.getElementById('slide'));
      document.getElementById('next').replaceWith(d.getElementById('next'));
      history.pushState({}, '', u);
      wireNext();
    });
  });
}
wireNext();
</script>"#;

impl PortalSpec {
    pub fn from_json(bytes: &[u8]) -> Result<Self, PortalError> {
        let spec: Self = serde_json::from_slice(bytes).map_err(|e| PortalError::Spec(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), PortalError> {
        let mut names = std::collections::HashSet::new();
        for n in self.repos.iter().map(|r| ("repo", &r.name)).chain(self.decks.iter().map(|d| ("deck", &d.name))) {
            if n.1.is_empty() || n.1.contains(['/', '?', '#']) {
                return Err(PortalError::Spec(format!("bad {} name {:?}", n.0, n.1)));
            }
            if !names.insert(n) {
                return Err(PortalError::Spec(format!("duplicate {} name {:?}", n.0, n.1)));
            }
        }
        Ok(())
    }

    fn repo(&self, name: &str) -> Option<&RepoSpec> {
        self.repos.iter().find(|r| r.name == name)
    }

    fn deck(&self, name: &str) -> Option<&DeckSpec> {
        self.decks.iter().find(|d| d.name == name)
    }

    fn head(&self, title: &str) -> String {
        let css = if self.with_assets {
            format!(r#"<link rel="stylesheet" href="{STYLESHEET}">"#)
        } else {
            String::new()
        };
        format!("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title>{css}</head>\n<body>\n", esc(title))
    }

    pub fn render_repo(&self, r: &RepoSpec) -> String {
        let n = esc(&r.name);
        let mut html = self.head(&r.name);
        html.push_str(&format!("<h1>{n}</h1>\n<ul id=\"file-list\">\n"));
        for i in 1..=r.file_count {
            html.push_str(&format!(
                "<li><a class=\"file\" href=\"/repo/{n}/blob/file-{i}.txt\">file-{i}.txt</a></li>\n"
            ));
        }
        html.push_str("</ul>\n");
        if r.with_zip {
            html.push_str(&format!(
                "<a id=\"download-zip\" href=\"/repo/{n}/archive.zip\" download>Download ZIP</a>\n"
            ));
        }
        html.push_str("</body></html>\n");
        html
    }

    pub fn render_deck(&self, d: &DeckSpec) -> String {
        let n = esc(&d.name);
        let mut html = self.head(&d.name);
        html.push_str(&format!("<h1>{n}</h1>\n<ul id=\"notes\">\n"));
        for k in 1..=d.note_count {
            html.push_str(&format!("<li><a class=\"note\" href=\"/deck/{n}/notes/{k}\">Note {k}</a></li>\n"));
        }
        html.push_str("</ul>\n");
        if d.slide_count > 0 {
            html.push_str(&format!("<a id=\"start\" href=\"/deck/{n}/slide/1\">Start</a>\n"));
        }
        html.push_str("</body></html>\n");
        html
    }

    pub fn render_slide(&self, d: &DeckSpec, k: u32) -> String {
        let n = esc(&d.name);
        let mut html = self.head(&format!("{} {k}", d.name));
        html.push_str(&format!("<div id=\"slide\">Slide {k} of {}</div>\n", d.slide_count));
        let next = k + 1;
        if k >= d.slide_count {
            html.push_str("<button id=\"next\" disabled>Next</button>\n");
        } else if d.dynamic {
            html.push_str(&format!("<button id=\"next\" data-next=\"/deck/{n}/slide/{next}\">Next</button>\n"));
            html.push_str(DYNAMIC_NEXT);
            html.push('\n');
        } else {
            html.push_str(&format!("<a id=\"next\" href=\"/deck/{n}/slide/{next}\">Next</a>\n"));
        }
        html.push_str("</body></html>\n");
        html
    }

    fn resources(&self) -> Vec<String> {
        if self.with_assets {
            vec![STYLESHEET.to_string()]
        } else {
            Vec::new()
        }
    }

    /// The same site as a mock-backend script rooted at `base` (for example
    /// `https://127.0.0.1:8443`).
    pub fn page_script(&self, base: &str) -> PageScript {
        let base = base.trim_end_matches('/');
        let mut pages = BTreeMap::new();
        let page = |elements| ScriptPage {
            resources: self.resources(),
            elements,
        };
        for r in &self.repos {
            let mut list = ScriptElement::new("ul").id("file-list");
            for i in 1..=r.file_count {
                list = list.child(
                    ScriptElement::new("li").child(
                        ScriptElement::new("a")
                            .class("file")
                            .href(&format!("/repo/{}/blob/file-{i}.txt", r.name)),
                    ),
                );
            }
            let mut els = vec![ScriptElement::new("h1"), list];
            if r.with_zip {
                els.push(
                    ScriptElement::new("a")
                        .id("download-zip")
                        .href(&format!("/repo/{}/archive.zip", r.name))
                        .download(),
                );
            }
            pages.insert(format!("{base}/repo/{}", r.name), page(els));
            for i in 1..=r.file_count {
                pages.insert(
                    format!("{base}/repo/{}/blob/file-{i}.txt", r.name),
                    ScriptPage::default(),
                );
            }
        }
        for d in &self.decks {
            let mut notes = ScriptElement::new("ul").id("notes");
            for k in 1..=d.note_count {
                notes = notes.child(
                    ScriptElement::new("li").child(
                        ScriptElement::new("a")
                            .class("note")
                            .href(&format!("/deck/{}/notes/{k}", d.name)),
                    ),
                );
                pages.insert(format!("{base}/deck/{}/notes/{k}", d.name), page(vec![]));
            }
            let mut els = vec![ScriptElement::new("h1"), notes];
            if d.slide_count > 0 {
                els.push(ScriptElement::new("a").id("start").href(&format!("/deck/{}/slide/1", d.name)));
            }
            pages.insert(format!("{base}/deck/{}", d.name), page(els));
            for k in 1..=d.slide_count {
                let next_url = format!("/deck/{}/slide/{}", d.name, k + 1);
                let next = if k >= d.slide_count {
                    ScriptElement::new("button").id("next").disabled(true)
                } else if d.dynamic {
                    ScriptElement::new("button")
                        .id("next")
                        .attr("data-next", &next_url)
                        .on_click(Transition {
                            navigate: Some(next_url.clone()),
                            mode: TransitionMode::PushState,
                            fetch: vec![next_url.clone()],
                        })
                } else {
                    ScriptElement::new("a").id("next").href(&next_url)
                };
                pages.insert(
                    format!("{base}/deck/{}/slide/{k}", d.name),
                    page(vec![ScriptElement::new("div").id("slide"), next]),
                );
            }
        }
        PageScript { pages }
    }
}

fn fixture_provenance(created_on: String) -> Provenance {
    Provenance {
        created_on,
        user_agent: crate::driver::DEFAULT_USER_AGENT.to_string(),
        created_at: DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z").expect("constant timestamp"),
        curator: Some("fixture".into()),
    }
}

/// Class-level trace for every repository page under `base`.
pub fn repo_trace(base: &str, wait_after_ms: u64) -> Trace {
    let base = base.trim_end_matches('/');
    Trace::new(
        "fixture-repo",
        UrlPattern::new(format!("{base}/repo/*")),
        fixture_provenance(format!("{base}/repo/example")),
    )
    .push(
        TraceAction::click_all(Selector::id("file-list"), Selector::css("a.file")).with_wait(wait_after_ms),
        Some("files"),
    )
    .push(
        TraceAction::click(Selector::id("download-zip"))
            .with_wait(wait_after_ms)
            .with_on_missing(crate::trace::OnMissing::Skip),
        Some("zip"),
    )
}

/// Class-level trace for every slide deck page under `base`.
pub fn deck_trace(base: &str, wait_after_ms: u64) -> Trace {
    let base = base.trim_end_matches('/');
    Trace::new(
        "fixture-deck",
        UrlPattern::new(format!("{base}/deck/*")),
        fixture_provenance(format!("{base}/deck/example")),
    )
    .push(
        TraceAction::click_all(Selector::id("notes"), Selector::class("note")).with_wait(wait_after_ms),
        Some("notes"),
    )
    .push(
        TraceAction::click(Selector::id("start"))
            .with_wait(wait_after_ms)
            .with_on_missing(crate::trace::OnMissing::Skip),
        Some("slides"),
    )
    .push(
        TraceAction::repeat_click(Selector::css("#next"), Until::ElementDisabled, None)
            .with_wait(wait_after_ms)
            .with_on_missing(crate::trace::OnMissing::Skip),
        Some("slides"),
    )
}

#[derive(Debug, Default)]
struct Stats {
    hits: Mutex<BTreeMap<String, u64>>,
    in_flight: AtomicU64,
    max_concurrency: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub hits: BTreeMap<String, u64>,
    pub total_hits: u64,
    pub in_flight: u64,
    pub max_concurrency: u64,
}

impl Stats {
    fn snapshot(&self) -> StatsSnapshot {
        let hits = self.hits.lock().unwrap().clone();
        StatsSnapshot {
            total_hits: hits.values().sum(),
            hits,
            in_flight: self.in_flight.load(Ordering::SeqCst),
            max_concurrency: self.max_concurrency.load(Ordering::SeqCst),
        }
    }

    fn reset(&self) {
        self.hits.lock().unwrap().clear();
        self.max_concurrency.store(self.in_flight.load(Ordering::SeqCst), Ordering::SeqCst);
    }
}

#[derive(Clone)]
struct AppState {
    spec: Arc<PortalSpec>,
    stats: Arc<Stats>,
}

struct InFlight<'a>(&'a Stats);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn count_and_delay(State(st): State<AppState>, req: Request, next: Next) -> Response {
    let path = req.uri().path().to_string();
    if path.starts_with("/__stats") {
        return next.run(req).await;
    }
    *st.stats.hits.lock().unwrap().entry(path.clone()).or_insert(0) += 1;
    let now = st.stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.stats.max_concurrency.fetch_max(now, Ordering::SeqCst);
    let _guard = InFlight(&st.stats);
    let delay = st.spec.delay_ms.get(&path).copied().unwrap_or(st.spec.default_delay_ms);
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    next.run(req).await
}

fn not_found() -> Response {
    (StatusCode::NOT_FOUND, "not found\n").into_response()
}

async fn repo_page(State(st): State<AppState>, Path(name): Path<String>) -> Response {
    match st.spec.repo(&name) {
        Some(r) => Html(st.spec.render_repo(r)).into_response(),
        None => not_found(),
    }
}

async fn repo_file(State(st): State<AppState>, Path((name, file)): Path<(String, String)>) -> Response {
    let Some(r) = st.spec.repo(&name) else {
        return not_found();
    };
    let ok = file
        .strip_prefix("file-")
        .and_then(|f| f.strip_suffix(".txt"))
        .and_then(|i| i.parse::<u32>().ok())
        .is_some_and(|i| (1..=r.file_count).contains(&i));
    if !ok {
        return not_found();
    }
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], format!("{name}/{file}\n")).into_response()
}

async fn repo_zip(State(st): State<AppState>, Path(name): Path<String>) -> Response {
    match st.spec.repo(&name) {
        Some(r) if r.with_zip => {
            let mut body = b"PK\x05\x06".to_vec();
            body.extend_from_slice(&[0u8; 18]);
            body.extend_from_slice(name.as_bytes());
            (
                [
                    (header::CONTENT_TYPE, "application/zip".to_string()),
                    (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{name}.zip\"")),
                ],
                body,
            )
                .into_response()
        }
        _ => not_found(),
    }
}

async fn deck_page(State(st): State<AppState>, Path(name): Path<String>) -> Response {
    match st.spec.deck(&name) {
        Some(d) => Html(st.spec.render_deck(d)).into_response(),
        None => not_found(),
    }
}

async fn slide_page(State(st): State<AppState>, Path((name, k)): Path<(String, u32)>) -> Response {
    match st.spec.deck(&name) {
        Some(d) if (1..=d.slide_count).contains(&k) => Html(st.spec.render_slide(d, k)).into_response(),
        _ => not_found(),
    }
}

async fn note_page(State(st): State<AppState>, Path((name, k)): Path<(String, u32)>) -> Response {
    match st.spec.deck(&name) {
        Some(d) if (1..=d.note_count).contains(&k) => {
            let mut html = st.spec.head(&format!("{name} note {k}"));
            html.push_str(&format!("<p>Note {k} for {}</p>\n</body></html>\n", esc(&name)));
            Html(html).into_response()
        }
        _ => not_found(),
    }
}

async fn resource(Path(file): Path<String>) -> Response {
    let ct = if file.ends_with(".css") {
        "text/css"
    } else if file.ends_with(".js") {
        "application/javascript"
    } else {
        "text/plain; charset=utf-8"
    };
    ([(header::CONTENT_TYPE, ct)], format!("/* resource {file} */\n")).into_response()
}

async fn delayed(Path(ms): Path<u64>) -> Response {
    tokio::time::sleep(Duration::from_millis(ms.min(120_000))).await;
    format!("waited {ms} ms\n").into_response()
}

async fn status(Path(code): Path<u16>) -> Response {
    let code = StatusCode::from_u16(code).unwrap_or(StatusCode::BAD_REQUEST);
    (code, format!("status {}\n", code.as_u16())).into_response()
}

/// `n` pieces sent as separate chunks.
async fn stream(Path(n): Path<u32>) -> Response {
    let pieces = (0..n.min(10_000)).map(|i| Ok::<_, std::io::Error>(format!("piece {i}\n")));
    let body = Body::from_stream(futures_util::stream::iter(pieces));
    let mut resp = Response::new(body);
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("text/plain"));
    resp
}

/// Deterministic body of exactly `n` bytes.
async fn large(Path(n): Path<usize>) -> Response {
    let n = n.min(256 * 1024 * 1024);
    let body: Vec<u8> = (0..n).map(|i| b'a' + (i % 26) as u8).collect();
    ([(header::CONTENT_TYPE, "application/octet-stream")], body).into_response()
}

async fn stats(State(st): State<AppState>) -> Json<StatsSnapshot> {
    Json(st.stats.snapshot())
}

async fn reset_stats(State(st): State<AppState>) -> StatusCode {
    st.stats.reset();
    StatusCode::NO_CONTENT
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/repo/{name}", get(repo_page))
        .route("/repo/{name}/blob/{file}", get(repo_file))
        .route("/repo/{name}/archive.zip", get(repo_zip))
        .route("/deck/{name}", get(deck_page))
        .route("/deck/{name}/slide/{k}", get(slide_page))
        .route("/deck/{name}/notes/{k}", get(note_page))
        .route("/res/{file}", get(resource))
        .route("/delay/{ms}", get(delayed))
        .route("/status/{code}", get(status))
        .route("/stream/{n}", get(stream))
        .route("/large/{n}", get(large))
        .route("/__stats", get(stats))
        .route("/__stats/reset", post(reset_stats))
        .fallback(|| async { not_found() })
        .layer(middleware::from_fn_with_state(state.clone(), count_and_delay))
        .with_state(state)
}

pub struct PortalHandle {
    addr: SocketAddr,
    base_url: String,
    ca_pem: Option<String>,
    spec: Arc<PortalSpec>,
    stats: Arc<Stats>,
    shutdown: watch::Sender<bool>,
    task: Option<tokio::task::JoinHandle<()>>,
}

/// Serves `spec` on 127.0.0.1:`port` (0 for an ephemeral port).
pub async fn serve(spec: PortalSpec, port: u16) -> Result<PortalHandle, PortalError> {
    serve_on(spec, IpAddr::V4(Ipv4Addr::LOCALHOST), port).await
}

pub async fn serve_on(spec: PortalSpec, ip: IpAddr, port: u16) -> Result<PortalHandle, PortalError> {
    spec.check()?;
    let listener = TcpListener::bind(SocketAddr::new(ip, port))
        .await
        .map_err(PortalError::Bind)?;
    let addr = listener.local_addr().map_err(PortalError::Bind)?;
    let (tls, ca_pem) = if spec.tls {
        let ca = CertAuthority::generate("tracer fixture portal CA")?;
        let host = ip.to_string();
        let cfg = ca.server_config(&["localhost", &host])?;
        (Some(TlsAcceptor::from(cfg)), Some(ca.cert_pem().to_string()))
    } else {
        (None, None)
    };
    let scheme = if tls.is_some() { "https" } else { "http" };
    let spec = Arc::new(spec);
    let stats = Arc::new(Stats::default());
    let app = router(AppState {
        spec: spec.clone(),
        stats: stats.clone(),
    });
    let (tx, mut rx) = watch::channel(false);
    let task = tokio::spawn(async move {
        let mut conns = tokio::task::JoinSet::new();
        loop {
            let (tcp, _) = tokio::select! {
                r = listener.accept() => match r {
                    Ok(c) => c,
                    Err(_) => continue,
                },
                _ = rx.changed() => break,
            };
            while conns.try_join_next().is_some() {}
            let svc = TowerToHyperService::new(app.clone());
            let tls = tls.clone();
            conns.spawn(async move {
                let _ = tcp.set_nodelay(true);
                let builder = hyper::server::conn::http1::Builder::new();
                match tls {
                    Some(acceptor) => {
                        if let Ok(s) = acceptor.accept(tcp).await {
                            let _ = builder.serve_connection(TokioIo::new(s), svc).await;
                        }
                    }
                    None => {
                        let _ = builder.serve_connection(TokioIo::new(tcp), svc).await;
                    }
                }
            });
        }
        conns.abort_all();
    });
    Ok(PortalHandle {
        addr,
        base_url: format!("{scheme}://{}", addr),
        ca_pem,
        spec,
        stats,
        shutdown: tx,
        task: Some(task),
    })
}

impl PortalHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Scheme, host and port, without a trailing slash.
    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    pub fn repo_url(&self, name: &str) -> String {
        self.url(&format!("/repo/{name}"))
    }

    pub fn deck_url(&self, name: &str) -> String {
        self.url(&format!("/deck/{name}"))
    }

    /// PEM of the CA that issued the portal's certificate.
    pub fn ca_pem(&self) -> Option<&str> {
        self.ca_pem.as_deref()
    }

    pub fn spec(&self) -> &PortalSpec {
        &self.spec
    }

    pub fn page_script(&self) -> PageScript {
        self.spec.page_script(&self.base_url)
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn reset_stats(&self) {
        self.stats.reset();
    }

    pub async fn stop(mut self) {
        let _ = self.shutdown.send(true);
        if let Some(t) = self.task.take() {
            let _ = t.await;
        }
    }
}

impl Drop for PortalHandle {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
    }
}
