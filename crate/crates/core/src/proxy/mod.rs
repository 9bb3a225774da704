//! Capturing forward proxy.
//!
//! Plain requests arrive in absolute form; HTTPS arrives as `CONNECT` and
//! the tunnel is terminated with a leaf certificate from a session CA.
//! Every exchange is relayed byte for byte and, once complete, written to
//! the WARC as a response record followed by its request record.

pub mod idle;
mod relay;

use std::collections::{HashMap, HashSet};
use std::io::{self, BufWriter, Read};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rustls::ClientConfig;
use serde::Serialize;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinSet;
use tokio_rustls::{TlsAcceptor, TlsConnector};
use tracer_warc::{Compression, DigestPair, RecordType, WarcError, WarcRecord, WarcWriter};
use url::Url;

use crate::driver::{Activity, IdleProbe};
use crate::tls::{server_name, CaError, CertAuthority, UpstreamTrust};
pub use idle::{IdleState, IdleTracker};
use relay::{Framing, Head, Spill, Tee};

/// Bodies larger than this are kept in a temp file rather than in memory.
pub const SPILL_THRESHOLD: usize = 8 * 1024 * 1024;
pub const DRAIN_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("cannot bind proxy listener: {0}")]
    Bind(io::Error),
    #[error(transparent)]
    Ca(#[from] CaError),
    #[error("cannot open WARC output: {0}")]
    Warc(#[from] WarcError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub enum CaSource {
    Generate,
    Load { cert_pem: String, key_pem: String },
    Shared(Arc<CertAuthority>),
}

pub struct ProxyConfig {
    pub bind: IpAddr,
    /// 0 picks an ephemeral port.
    pub port: u16,
    /// `None` runs the proxy for its idle signal only; nothing is archived.
    pub warc_output: Option<PathBuf>,
    pub compression: Compression,
    pub ca: CaSource,
    /// Where to export the CA certificate as PEM.
    pub ca_out: Option<PathBuf>,
    pub upstream: UpstreamTrust,
    pub spill_threshold: usize,
    pub drain_timeout: Duration,
    pub connect_timeout: Duration,
    /// Extra warcinfo fields.
    pub info: Vec<(String, String)>,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            warc_output: None,
            compression: Compression::GzipPerRecord,
            ca: CaSource::Generate,
            ca_out: None,
            upstream: UpstreamTrust::default(),
            spill_threshold: SPILL_THRESHOLD,
            drain_timeout: DRAIN_TIMEOUT,
            connect_timeout: Duration::from_secs(30),
            info: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    Recorded,
    DuplicateSkipped,
    ConnectTunnel,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExchangeSummary {
    pub target_uri: String,
    pub method: String,
    pub status: Option<u16>,
    pub payload_digest: Option<String>,
    /// Response body bytes as sent on the wire.
    pub bytes: u64,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub disposition: Disposition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_record_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaptureLog {
    pub warc_path: Option<PathBuf>,
    pub warcinfo_record_id: Option<String>,
    pub exchanges: Vec<ExchangeSummary>,
}

impl CaptureLog {
    pub fn count(&self, d: Disposition) -> usize {
        self.exchanges.iter().filter(|e| e.disposition == d).count()
    }
}

struct OpenExchange {
    uri: String,
    method: String,
    started: DateTime<Utc>,
}

struct Shared {
    tracker: IdleTracker,
    log: Mutex<Vec<ExchangeSummary>>,
    writer: Mutex<Option<WarcWriter<BufWriter<std::fs::File>>>>,
    archiving: bool,
    seen: Mutex<HashSet<(String, String)>>,
    open: Mutex<HashMap<u64, OpenExchange>>,
    next_id: AtomicU64,
    ca: Arc<CertAuthority>,
    upstream: Arc<ClientConfig>,
    spill_threshold: usize,
    connect_timeout: Duration,
    shutdown: watch::Receiver<bool>,
    conns: Mutex<JoinSet<()>>,
}

pub struct ProxyHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    accept: Mutex<Option<tokio::task::JoinHandle<()>>>,
    drain_timeout: Duration,
    warc_path: Option<PathBuf>,
    warcinfo_id: Option<String>,
    stopped: tokio::sync::Mutex<Option<CaptureLog>>,
}

fn warcinfo(fields: &[(String, String)]) -> WarcRecord {
    let mut block = String::new();
    for (k, v) in fields {
        block.push_str(&format!("{k}: {v}\r\n"));
    }
    WarcRecord::builder(RecordType::Warcinfo)
        .content_type("application/warc-fields")
        .block(block.into_bytes())
        .build()
}

pub async fn start_proxy(config: ProxyConfig) -> Result<ProxyHandle, ProxyError> {
    let ca = match config.ca {
        CaSource::Generate => Arc::new(CertAuthority::generate("tracer capture session CA")?),
        CaSource::Load { cert_pem, key_pem } => Arc::new(CertAuthority::load(&cert_pem, &key_pem)?),
        CaSource::Shared(ca) => ca,
    };
    if let Some(p) = &config.ca_out {
        std::fs::write(p, ca.cert_pem())?;
    }
    let upstream = config.upstream.client_config()?;
    let listener = TcpListener::bind(SocketAddr::new(config.bind, config.port))
        .await
        .map_err(ProxyError::Bind)?;
    let addr = listener.local_addr().map_err(ProxyError::Bind)?;

    let mut warcinfo_id = None;
    let writer = match &config.warc_output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let file = std::fs::File::create(path)?;
            let mut w = WarcWriter::new(BufWriter::new(file), config.compression);
            let mut fields = vec![
                ("software".to_string(), format!("tracer/{}", env!("CARGO_PKG_VERSION"))),
                ("format".to_string(), "WARC File Format 1.1".to_string()),
                ("proxy".to_string(), addr.to_string()),
                ("dedup".to_string(), "GET by target URI and payload digest".to_string()),
            ];
            fields.extend(config.info.iter().cloned());
            let info = warcinfo(&fields);
            warcinfo_id = info.record_id().map(str::to_string);
            w.write_record(&info)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };

    let (tx, rx) = watch::channel(false);
    let shared = Arc::new(Shared {
        tracker: IdleTracker::new(),
        log: Mutex::new(Vec::new()),
        archiving: writer.is_some(),
        writer: Mutex::new(writer),
        seen: Mutex::new(HashSet::new()),
        open: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(0),
        ca,
        upstream,
        spill_threshold: config.spill_threshold,
        connect_timeout: config.connect_timeout,
        shutdown: rx,
        conns: Mutex::new(JoinSet::new()),
    });
    let accept = tokio::spawn(accept_loop(listener, shared.clone()));
    Ok(ProxyHandle {
        addr,
        shared,
        shutdown: tx,
        accept: Mutex::new(Some(accept)),
        drain_timeout: config.drain_timeout,
        warc_path: config.warc_output,
        warcinfo_id,
        stopped: tokio::sync::Mutex::new(None),
    })
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut shutdown = shared.shutdown.clone();
    loop {
        tokio::select! {
            r = listener.accept() => {
                let Ok((stream, _)) = r else { continue };
                let _ = stream.set_nodelay(true);
                let s = shared.clone();
                let mut conns = shared.conns.lock().unwrap();
                while conns.try_join_next().is_some() {}
                conns.spawn(async move {
                    let _ = serve_plain(stream, s).await;
                });
            }
            _ = shutdown.changed() => break,
        }
    }
}

impl ProxyHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port` to configure as the browser's proxy.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn ca_pem(&self) -> &str {
        self.shared.ca.cert_pem()
    }

    pub fn idle_state(&self, quiet_ms: u64) -> IdleState {
        self.shared.tracker.state(quiet_ms)
    }

    pub fn tracker(&self) -> &IdleTracker {
        &self.shared.tracker
    }

    pub fn capture_log(&self) -> Vec<ExchangeSummary> {
        self.shared.log.lock().unwrap().clone()
    }

    /// Idle signal for a driver session.
    pub fn probe(&self) -> Arc<dyn IdleProbe> {
        Arc::new(Probe(self.shared.clone()))
    }

    /// Stops accepting, lets open exchanges finish (bounded by the drain
    /// timeout), closes the WARC and returns the log. Idempotent.
    pub async fn stop(&self) -> CaptureLog {
        let mut done = self.stopped.lock().await;
        if let Some(log) = &*done {
            return log.clone();
        }
        let _ = self.shutdown.send(true);
        let accept = self.accept.lock().unwrap().take();
        if let Some(a) = accept {
            let _ = a.await;
        }
        let deadline = tokio::time::Instant::now() + self.drain_timeout;
        while self.shared.tracker.in_flight() > 0 && tokio::time::Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        let mut conns = std::mem::take(&mut *self.shared.conns.lock().unwrap());
        conns.abort_all();
        while conns.join_next().await.is_some() {}

        let now = Utc::now();
        let leftovers: Vec<OpenExchange> = self.shared.open.lock().unwrap().drain().map(|(_, o)| o).collect();
        {
            let mut log = self.shared.log.lock().unwrap();
            for o in leftovers {
                log.push(ExchangeSummary {
                    target_uri: o.uri,
                    method: o.method,
                    status: None,
                    payload_digest: None,
                    bytes: 0,
                    started: o.started,
                    finished: now,
                    disposition: Disposition::Error,
                    response_record_id: None,
                    error: Some("still open when the drain timeout expired".into()),
                });
            }
        }
        let shared = self.shared.clone();
        let _ = tokio::task::spawn_blocking(move || {
            if let Some(w) = shared.writer.lock().unwrap().take() {
                if let Ok(mut inner) = w.into_inner() {
                    let _ = io::Write::flush(&mut inner);
                }
            }
        })
        .await;
        let log = CaptureLog {
            warc_path: self.warc_path.clone(),
            warcinfo_record_id: self.warcinfo_id.clone(),
            exchanges: self.capture_log(),
        };
        *done = Some(log.clone());
        log
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
        if let Some(a) = self.accept.lock().unwrap().take() {
            a.abort();
        }
        self.shared.conns.lock().unwrap().abort_all();
    }
}

struct Probe(Arc<Shared>);

impl IdleProbe for Probe {
    fn activity(&self) -> Activity {
        let s = self.0.tracker.state(0);
        Activity {
            in_flight: s.in_flight,
            quiet_for: Duration::from_millis(s.since_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Http,
    Https,
}

#[derive(Debug, Clone)]
struct Target {
    scheme: Scheme,
    host: String,
    port: u16,
}

impl Target {
    fn default_port(&self) -> bool {
        matches!((self.scheme, self.port), (Scheme::Http, 80) | (Scheme::Https, 443))
    }

    fn authority(&self) -> String {
        if self.default_port() {
            self.host.clone()
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }

    fn uri(&self, path: &str) -> String {
        let scheme = match self.scheme {
            Scheme::Http => "http",
            Scheme::Https => "https",
        };
        format!("{scheme}://{}{path}", self.authority())
    }
}

fn split_authority(authority: &str, default_port: u16) -> Option<(String, u16)> {
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, _)) if !h.ends_with(']') && h.contains(':') => (authority, None),
        Some((h, p)) => (h, Some(p.parse().ok()?)),
        None => (authority, None),
    };
    if host.is_empty() {
        return None;
    }
    Some((host.to_ascii_lowercase(), port.unwrap_or(default_port)))
}

trait Io: AsyncRead + AsyncWrite + Unpin + Send {}
impl<T: AsyncRead + AsyncWrite + Unpin + Send> Io for T {}

enum Next {
    Close,
    Connect(String, u16),
}

async fn serve_plain(stream: TcpStream, shared: Arc<Shared>) -> io::Result<()> {
    let mut io = BufReader::new(stream);
    let Next::Connect(host, port) = serve_requests(&mut io, None, &shared).await? else {
        return Ok(());
    };
    let now = Utc::now();
    io.get_mut()
        .write_all(b"HTTP/1.1 200 Connection Established\r\n\r\n")
        .await?;
    shared.log.lock().unwrap().push(ExchangeSummary {
        target_uri: format!("{host}:{port}"),
        method: "CONNECT".into(),
        status: Some(200),
        payload_digest: None,
        bytes: 0,
        started: now,
        finished: now,
        disposition: Disposition::ConnectTunnel,
        response_record_id: None,
        error: None,
    });
    let cfg = shared
        .ca
        .server_config(&[&host])
        .map_err(|e| io::Error::other(e.to_string()))?;
    let tls = TlsAcceptor::from(cfg).accept(io.into_inner()).await?;
    let mut tio = BufReader::new(tls);
    let target = Target {
        scheme: Scheme::Https,
        host,
        port,
    };
    serve_requests(&mut tio, Some(target), &shared).await?;
    Ok(())
}

async fn simple_response<W: AsyncWrite + Unpin>(w: &mut W, status: &str, body: &str) -> io::Result<()> {
    let msg = format!(
        "HTTP/1.1 {status}\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    w.write_all(msg.as_bytes()).await?;
    w.flush().await
}

async fn serve_requests<S: AsyncRead + AsyncWrite + Unpin + Send>(
    io: &mut BufReader<S>,
    tunnel: Option<Target>,
    shared: &Arc<Shared>,
) -> io::Result<Next> {
    let mut shutdown = shared.shutdown.clone();
    loop {
        if *shutdown.borrow() {
            return Ok(Next::Close);
        }
        let raw = tokio::select! {
            r = relay::read_head(io) => r?,
            _ = shutdown.changed() => return Ok(Next::Close),
        };
        let Some(raw) = raw else {
            return Ok(Next::Close);
        };
        let req = match relay::parse_request(&raw) {
            Ok(r) => r,
            Err(e) => {
                simple_response(io.get_mut(), "400 Bad Request", &e.to_string()).await?;
                return Ok(Next::Close);
            }
        };
        if req.method.eq_ignore_ascii_case("CONNECT") {
            if tunnel.is_some() {
                simple_response(io.get_mut(), "405 Method Not Allowed", "nested CONNECT").await?;
                return Ok(Next::Close);
            }
            return match split_authority(&req.target, 443) {
                Some((h, p)) => Ok(Next::Connect(h, p)),
                None => {
                    simple_response(io.get_mut(), "400 Bad Request", "bad CONNECT authority").await?;
                    Ok(Next::Close)
                }
            };
        }
        let (target, path) = match locate(&req.target, tunnel.as_ref()) {
            Some(t) => t,
            None => {
                simple_response(io.get_mut(), "400 Bad Request", "request target must be absolute").await?;
                return Ok(Next::Close);
            }
        };
        let mut req_tee: Tee<'_, S> = Tee::new(None, usize::MAX);
        relay::relay_body(io, relay::request_framing(&req)?, &mut req_tee).await?;
        let req_body = std::mem::replace(&mut req_tee.copy, Spill::new()).into_vec()?;
        drop(req_tee);
        let keep = exchange(io.get_mut(), &req, &raw, req_body, &target, &path, shared).await?;
        if !keep {
            return Ok(Next::Close);
        }
    }
}

/// Splits a request target into the origin to contact and the path to send.
fn locate(target: &str, tunnel: Option<&Target>) -> Option<(Target, String)> {
    if target.starts_with('/') {
        return tunnel.map(|t| (t.clone(), target.to_string()));
    }
    let url = Url::parse(target).ok()?;
    let scheme = match url.scheme() {
        "http" => Scheme::Http,
        "https" => Scheme::Https,
        _ => return None,
    };
    let host = match url.host()? {
        url::Host::Ipv6(a) => format!("[{a}]"),
        h => h.to_string(),
    };
    let port = url.port_or_known_default()?;
    let mut path = url.path().to_string();
    if let Some(q) = url.query() {
        path.push('?');
        path.push_str(q);
    }
    Some((Target { scheme, host, port }, path))
}

const HOP_HEADERS: [&str; 3] = ["proxy-connection", "proxy-authorization", "proxy-authenticate"];

/// The request as the origin receives it: origin-form target, proxy
/// headers removed, everything else untouched.
fn upstream_request(req: &Head, raw: &[u8], target: &Target, path: &str) -> Vec<u8> {
    let version = std::str::from_utf8(raw)
        .ok()
        .and_then(|s| s.lines().next())
        .and_then(|l| l.rsplit(' ').next())
        .filter(|v| v.starts_with("HTTP/"))
        .unwrap_or("HTTP/1.1");
    let mut out = format!("{} {} {}\r\n", req.method, path, version.trim()).into_bytes();
    if req.header("host").is_none() {
        out.extend_from_slice(format!("Host: {}\r\n", target.authority()).as_bytes());
    }
    for (name, value) in &req.headers {
        if HOP_HEADERS.iter().any(|h| name.eq_ignore_ascii_case(h)) {
            continue;
        }
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(b": ");
        out.extend_from_slice(value);
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(b"\r\n");
    out
}

async fn connect_upstream(target: &Target, shared: &Shared) -> io::Result<(Box<dyn Io>, Option<IpAddr>)> {
    let host = target.host.trim_start_matches('[').trim_end_matches(']').to_string();
    let tcp = tokio::time::timeout(shared.connect_timeout, TcpStream::connect((host.as_str(), target.port)))
        .await
        .map_err(|_| io::Error::new(io::ErrorKind::TimedOut, "upstream connect timed out"))??;
    let _ = tcp.set_nodelay(true);
    let ip = tcp.peer_addr().ok().map(|a| a.ip());
    match target.scheme {
        Scheme::Http => Ok((Box::new(tcp), ip)),
        Scheme::Https => {
            let name = server_name(&host).map_err(|e| io::Error::other(e.to_string()))?;
            let tls = TlsConnector::from(shared.upstream.clone()).connect(name, tcp).await?;
            Ok((Box::new(tls), ip))
        }
    }
}

struct Captured {
    head: Vec<u8>,
    status: u16,
    body: Spill,
    digests: DigestPair,
    body_bytes: u64,
    ip: Option<IpAddr>,
}

/// Relays one exchange to the client; returns whether the client
/// connection can carry another request.
async fn exchange<W: AsyncWrite + Unpin>(
    client: &mut W,
    req: &Head,
    raw_req: &[u8],
    req_body: Vec<u8>,
    target: &Target,
    path: &str,
    shared: &Arc<Shared>,
) -> io::Result<bool> {
    let uri = target.uri(path);
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let started = Utc::now();
    shared.tracker.begin();
    shared.open.lock().unwrap().insert(
        id,
        OpenExchange {
            uri: uri.clone(),
            method: req.method.clone(),
            started,
        },
    );
    let mut req_block = upstream_request(req, raw_req, target, path);
    req_block.extend_from_slice(&req_body);

    let outcome = forward(client, req, &req_block, target, shared).await;
    let (keep, summary) = match outcome {
        Ok((captured, keep)) => {
            let s = record(shared, &uri, &req.method, req_block, captured, started).await;
            (keep, s)
        }
        Err(e) => {
            let _ = simple_response(client, "502 Bad Gateway", &format!("upstream failure: {e}")).await;
            (
                false,
                ExchangeSummary {
                    target_uri: uri.clone(),
                    method: req.method.clone(),
                    status: None,
                    payload_digest: None,
                    bytes: 0,
                    started,
                    finished: Utc::now(),
                    disposition: Disposition::Error,
                    response_record_id: None,
                    error: Some(e.to_string()),
                },
            )
        }
    };
    shared.log.lock().unwrap().push(summary);
    shared.open.lock().unwrap().remove(&id);
    shared.tracker.end();
    Ok(keep && !req.wants_close())
}

async fn forward<W: AsyncWrite + Unpin>(
    client: &mut W,
    req: &Head,
    req_block: &[u8],
    target: &Target,
    shared: &Shared,
) -> io::Result<(Captured, bool)> {
    let (mut up, ip) = connect_upstream(target, shared).await?;
    up.write_all(req_block).await?;
    up.flush().await?;
    let mut up = BufReader::new(up);
    let (head_raw, head) = loop {
        let raw = relay::read_head(&mut up)
            .await?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "upstream closed without a response"))?;
        let head = relay::parse_response(&raw)?;
        if (100..200).contains(&head.status) && head.status != 101 {
            let _ = client.write_all(&raw).await;
            continue;
        }
        break (raw, head);
    };
    let framing = relay::response_framing(&req.method, &head)?;
    let mut tee = Tee::new(Some(client), shared.spill_threshold);
    tee.forward(&head_raw).await;
    tee.block.update(&head_raw);
    relay::relay_body(&mut up, framing, &mut tee).await?;
    let client_ok = tee.peer.is_some();
    let body_bytes = tee.copy.len();
    let block = std::mem::take(&mut tee.block).finish();
    let payload = std::mem::take(&mut tee.payload).finish();
    let body = std::mem::replace(&mut tee.copy, Spill::new());
    let keep = client_ok && framing != Framing::UntilClose && !head.wants_close();
    Ok((
        Captured {
            head: head_raw,
            status: head.status,
            body,
            digests: DigestPair {
                block,
                payload: Some(payload),
            },
            body_bytes,
            ip,
        },
        keep,
    ))
}

async fn record(
    shared: &Arc<Shared>,
    uri: &str,
    method: &str,
    req_block: Vec<u8>,
    captured: Captured,
    started: DateTime<Utc>,
) -> ExchangeSummary {
    let payload = captured.digests.payload.clone();
    let mut summary = ExchangeSummary {
        target_uri: uri.to_string(),
        method: method.to_string(),
        status: Some(captured.status),
        payload_digest: payload.clone(),
        bytes: captured.body_bytes,
        started,
        finished: Utc::now(),
        disposition: Disposition::Recorded,
        response_record_id: None,
        error: None,
    };
    if method.eq_ignore_ascii_case("GET") {
        let key = (uri.to_string(), payload.clone().unwrap_or_default());
        if !shared.seen.lock().unwrap().insert(key) {
            summary.disposition = Disposition::DuplicateSkipped;
            return summary;
        }
    }
    if !shared.archiving {
        return summary;
    }
    let s = shared.clone();
    let uri = uri.to_string();
    let written = tokio::task::spawn_blocking(move || write_pair(&s, &uri, req_block, captured, started)).await;
    match written {
        Ok(Ok(id)) => summary.response_record_id = Some(id),
        Ok(Err(e)) => {
            summary.disposition = Disposition::Error;
            summary.error = Some(format!("WARC write failed: {e}"));
        }
        Err(e) => {
            summary.disposition = Disposition::Error;
            summary.error = Some(format!("WARC writer task failed: {e}"));
        }
    }
    summary.finished = Utc::now();
    summary
}

fn write_pair(
    shared: &Shared,
    uri: &str,
    req_block: Vec<u8>,
    mut captured: Captured,
    started: DateTime<Utc>,
) -> Result<String, WarcError> {
    let len = captured.head.len() as u64 + captured.body.len();
    let mut builder = WarcRecord::builder(RecordType::Response)
        .target_uri(uri)
        .date(started)
        .content_type("application/http; msgtype=response");
    if let Some(ip) = captured.ip {
        builder = builder.header("WARC-IP-Address", ip.to_string());
    }
    let response = builder.build_streamed(len, captured.digests.clone());
    let response_id = response.record_id().unwrap_or_default().to_string();
    let request = WarcRecord::builder(RecordType::Request)
        .target_uri(uri)
        .date(started)
        .concurrent_to(response_id.clone())
        .content_type("application/http; msgtype=request")
        .block(req_block)
        .build();
    let mut guard = shared.writer.lock().unwrap();
    let Some(w) = guard.as_mut() else {
        return Err(WarcError::InvalidRecord("WARC writer already closed".into()));
    };
    let head = std::mem::take(&mut captured.head);
    let mut block = head.as_slice().chain(captured.body.reader()?);
    w.write_streamed(&response, &mut block, len)?;
    w.write_record(&request)?;
    w.flush()?;
    Ok(response_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn authority_parsing() {
        assert_eq!(split_authority("example.org:8443", 443), Some(("example.org".into(), 8443)));
        assert_eq!(split_authority("Example.org", 443), Some(("example.org".into(), 443)));
        assert_eq!(split_authority("[::1]:9", 443), Some(("[::1]".into(), 9)));
        assert_eq!(split_authority(":9", 443), None);
    }

    #[test]
    fn targets_and_uris() {
        let (t, p) = locate("http://Example.org:8080/a?b=1", None).unwrap();
        assert_eq!(t.uri(&p), "http://example.org:8080/a?b=1");
        let tunnel = Target {
            scheme: Scheme::Https,
            host: "h".into(),
            port: 443,
        };
        let (t, p) = locate("/x", Some(&tunnel)).unwrap();
        assert_eq!(t.uri(&p), "https://h/x");
        assert!(locate("/x", None).is_none());
        assert!(locate("ftp://h/x", None).is_none());
    }

    #[test]
    fn upstream_request_is_origin_form_without_proxy_headers() {
        let raw = b"GET http://h:81/p?q HTTP/1.1\r\nHost: h:81\r\nProxy-Connection: keep-alive\r\nAccept: */*\r\n\r\n";
        let req = relay::parse_request(raw).unwrap();
        let (t, p) = locate(&req.target, None).unwrap();
        let out = upstream_request(&req, raw, &t, &p);
        assert_eq!(out, b"GET /p?q HTTP/1.1\r\nHost: h:81\r\nAccept: */*\r\n\r\n");
    }
}
