//! In-process backend that plays a [`PageScript`]. Every page load,
//! sub-resource and click-triggered fetch is a real HTTP request, routed
//! through the configured proxy, so captures made with it are genuine.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use url::Url;

use super::script::{strip_fragment, Document, PageScript, TransitionMode};
use super::{is_gateway_status, Backend, DriverConfig, DriverError, ElementInfo};
use crate::trace::Selector;

#[derive(Debug, Clone)]
struct HistoryEntry {
    url: String,
    pushed: bool,
}

pub struct MockBackend {
    id: String,
    script: Arc<PageScript>,
    client: reqwest::Client,
    history: Vec<HistoryEntry>,
    doc: Document,
    /// Bumped whenever `doc` is replaced; part of every handle.
    generation: u64,
    fetches: u64,
    closed: bool,
}

/// HTTP client shared by the mock backend and anything else that must look
/// like the session's browser on the wire.
pub fn browser_client(config: &DriverConfig) -> Result<reqwest::Client, DriverError> {
    let mut b = reqwest::Client::builder()
        .user_agent(config.user_agent.clone())
        .http1_only()
        .timeout(Duration::from_millis(config.page_load_timeout_ms))
        .redirect(reqwest::redirect::Policy::limited(10));
    let mut roots = Vec::new();
    for pem in &config.trust_pem {
        let certs = reqwest::Certificate::from_pem_bundle(pem)
            .map_err(|e| DriverError::CapabilityRejected(format!("bad trust anchor: {e}")))?;
        roots.extend(certs);
    }
    if !roots.is_empty() {
        b = b.tls_certs_only(roots);
    }
    b = match &config.proxy_endpoint {
        Some(ep) => {
            let proxy = reqwest::Proxy::all(format!("http://{ep}"))
                .map_err(|e| DriverError::CapabilityRejected(format!("proxy {ep}: {e}")))?;
            b.proxy(proxy)
        }
        None => b.no_proxy(),
    };
    b.build()
        .map_err(|e| DriverError::CapabilityRejected(e.to_string()))
}

impl MockBackend {
    pub fn new(config: &DriverConfig) -> Result<Self, DriverError> {
        let script = config
            .page_script
            .clone()
            .ok_or_else(|| DriverError::CapabilityRejected("mock backend needs a page script".into()))?;
        Ok(Self {
            id: format!("mock-{}", uuid::Uuid::new_v4()),
            script,
            client: browser_client(config)?,
            history: Vec::new(),
            doc: Document::empty(),
            generation: 0,
            fetches: 0,
            closed: false,
        })
    }

    /// Number of HTTP requests issued so far.
    pub fn fetch_count(&self) -> u64 {
        self.fetches
    }

    fn current(&self) -> Option<&str> {
        self.history.last().map(|h| h.url.as_str())
    }

    fn resolve_url(&self, reference: &str) -> Result<String, DriverError> {
        let joined = match self.current() {
            Some(base) => Url::parse(base).and_then(|b| b.join(reference)),
            None => Url::parse(reference),
        };
        joined
            .map(String::from)
            .map_err(|e| DriverError::Backend {
                status: "invalid argument".into(),
                message: format!("{reference}: {e}"),
            })
    }

    async fn fetch(&mut self, url: &str) -> Result<u16, DriverError> {
        self.fetches += 1;
        let resp = self.client.get(strip_fragment(url)).send().await.map_err(|e| classify(url, e))?;
        let status = resp.status().as_u16();
        resp.bytes().await.map_err(|e| classify(url, e))?;
        Ok(status)
    }

    fn show(&mut self, url: &str) {
        self.generation += 1;
        self.doc = match self.script.page(url) {
            Some(p) => Document::from_page(p),
            None => Document::empty(),
        };
    }

    /// Full page load: the document, then its sub-resources.
    async fn load(&mut self, url: &str) -> Result<(), DriverError> {
        let status = self.fetch(url).await?;
        if is_gateway_status(status) {
            return Err(DriverError::Network(format!("{url} answered {status}")));
        }
        self.show(url);
        let resources = self.script.page(url).map(|p| p.resources.clone()).unwrap_or_default();
        for r in resources {
            let abs = Url::parse(url)
                .and_then(|b| b.join(&r))
                .map(String::from)
                .unwrap_or(r);
            self.fetch(&abs).await?;
        }
        Ok(())
    }

    fn node_of(&self, handle: &str) -> Result<usize, DriverError> {
        let stale = || DriverError::StaleElement(handle.to_string());
        let (gen, idx) = handle.strip_prefix('m').and_then(|h| h.split_once(':')).ok_or_else(stale)?;
        let gen: u64 = gen.parse().map_err(|_| stale())?;
        let idx: usize = idx.parse().map_err(|_| stale())?;
        if gen != self.generation || idx == 0 || idx >= self.doc.len() {
            return Err(stale());
        }
        Ok(idx)
    }

    fn handle(&self, idx: usize) -> String {
        format!("m{}:{idx}", self.generation)
    }

    fn check_open(&self) -> Result<(), DriverError> {
        if self.closed {
            Err(DriverError::SessionClosed)
        } else {
            Ok(())
        }
    }
}

fn classify(url: &str, e: reqwest::Error) -> DriverError {
    if e.is_timeout() {
        DriverError::NavigationTimeout(url.to_string())
    } else {
        DriverError::Network(format!("{url}: {e}"))
    }
}

fn is_disabled(doc: &Document, idx: usize) -> bool {
    doc.node(idx)
        .map(|n| n.attr("disabled").is_some() || n.attr("aria-disabled") == Some("true"))
        .unwrap_or(false)
}

#[async_trait]
impl Backend for MockBackend {
    fn session_id(&self) -> &str {
        &self.id
    }

    async fn navigate(&mut self, url: &str) -> Result<(), DriverError> {
        self.check_open()?;
        let url = self.resolve_url(url)?;
        self.history.push(HistoryEntry {
            url: url.clone(),
            pushed: false,
        });
        self.load(&url).await
    }

    async fn find(&mut self, selector: &Selector, scope: Option<&str>) -> Result<Vec<String>, DriverError> {
        self.check_open()?;
        let scope = scope.map(|h| self.node_of(h)).transpose()?;
        let found = self.doc.select(selector, scope).map_err(|message| DriverError::Backend {
            status: "invalid selector".into(),
            message,
        })?;
        Ok(found.into_iter().map(|i| self.handle(i)).collect())
    }

    async fn describe(&mut self, handle: &str) -> Result<ElementInfo, DriverError> {
        self.check_open()?;
        let idx = self.node_of(handle)?;
        let node = self.doc.node(idx).expect("checked handle");
        let is_anchor = node.tag == "a";
        let href = match node.attr("href") {
            Some(h) if is_anchor => Some(self.resolve_url(h)?),
            _ => None,
        };
        Ok(ElementInfo {
            is_anchor,
            href,
            disabled: is_disabled(&self.doc, idx),
        })
    }

    async fn click(&mut self, handle: &str) -> Result<(), DriverError> {
        self.check_open()?;
        let idx = self.node_of(handle)?;
        if is_disabled(&self.doc, idx) {
            return Ok(());
        }
        let el = self.doc.element(idx).cloned().unwrap_or_default();
        if let Some(t) = el.on_click {
            for f in &t.fetch {
                let abs = self.resolve_url(f)?;
                self.fetch(&abs).await?;
            }
            if let Some(target) = &t.navigate {
                let abs = self.resolve_url(target)?;
                match t.mode {
                    TransitionMode::Load => {
                        self.history.push(HistoryEntry {
                            url: abs.clone(),
                            pushed: false,
                        });
                        self.load(&abs).await?;
                    }
                    TransitionMode::PushState => {
                        self.history.push(HistoryEntry {
                            url: abs.clone(),
                            pushed: true,
                        });
                        self.show(&abs);
                    }
                }
            }
            return Ok(());
        }
        if el.tag.eq_ignore_ascii_case("a") {
            if let Some(h) = &el.href {
                let abs = self.resolve_url(h)?;
                if el.download {
                    self.fetch(&abs).await?;
                } else if strip_fragment(&abs) == self.current().map(strip_fragment).unwrap_or_default() {
                    // In-page anchor: no request, no new document.
                } else {
                    self.history.push(HistoryEntry {
                        url: abs.clone(),
                        pushed: false,
                    });
                    self.load(&abs).await?;
                }
            }
        }
        Ok(())
    }

    async fn current_url(&mut self) -> Result<Option<String>, DriverError> {
        self.check_open()?;
        Ok(self.current().map(str::to_string))
    }

    async fn back(&mut self) -> Result<(), DriverError> {
        self.check_open()?;
        if self.history.len() < 2 {
            return Ok(());
        }
        let left = self.history.pop().expect("length checked");
        let prev = self.current().expect("length checked").to_string();
        if left.pushed {
            self.show(&prev);
            Ok(())
        } else {
            self.load(&prev).await
        }
    }

    async fn close(&mut self) -> Result<(), DriverError> {
        self.closed = true;
        Ok(())
    }
}
