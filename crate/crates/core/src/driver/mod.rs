//! Browser sessions that execute compiled plans.
//!
//! A [`DriverSession`] runs [`PlanStep`]s against a [`Backend`]: either a
//! real browser reached over the W3C WebDriver protocol or the in-process
//! [`mock::MockBackend`] that plays a [`script::PageScript`].

mod css;
pub mod mock;
pub mod script;
pub mod webdriver;
mod xpath;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{ActionPlan, PlanStep, StepOp};
use crate::trace::{OnMissing, Selector, Until};

pub use script::{Document, PageScript, ScriptElement, ScriptPage, Transition, TransitionMode};

/// Page loads slower than this fail with [`DriverError::NavigationTimeout`].
pub const PAGE_LOAD_TIMEOUT_MS: u64 = 60_000;
pub const DEFAULT_USER_AGENT: &str =
    "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/124.0 Safari/537.36";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Webdriver,
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Webdriver => "webdriver",
            BackendKind::Mock => "mock",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DriverError {
    #[error("webdriver endpoint unreachable: {0}")]
    DriverUnreachable(String),
    #[error("session capabilities rejected: {0}")]
    CapabilityRejected(String),
    #[error("no element matches {0}")]
    ElementNotFound(String),
    #[error("stale element reference {0}")]
    StaleElement(String),
    #[error("navigation to {0} timed out")]
    NavigationTimeout(String),
    #[error("backend error ({status}): {message}")]
    Backend { status: String, message: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("binding {0} was never resolved")]
    UnknownBinding(String),
    #[error("session is closed")]
    SessionClosed,
}

impl DriverError {
    /// Errors worth one more attempt: transport failures and gateway
    /// statuses, as opposed to problems with the page or the plan.
    pub fn is_network(&self) -> bool {
        matches!(self, DriverError::Network(_) | DriverError::NavigationTimeout(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DriverError::DriverUnreachable(_) => "driver-unreachable",
            DriverError::CapabilityRejected(_) => "capability-rejected",
            DriverError::ElementNotFound(_) => "element-not-found",
            DriverError::StaleElement(_) => "stale-element",
            DriverError::NavigationTimeout(_) => "navigation-timeout",
            DriverError::Backend { .. } => "backend-error",
            DriverError::Network(_) => "network",
            DriverError::UnknownBinding(_) => "unknown-binding",
            DriverError::SessionClosed => "session-closed",
        }
    }
}

/// HTTP statuses treated like transport failures.
pub fn is_gateway_status(status: u16) -> bool {
    matches!(status, 502..=504)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ElementRef {
    pub handle: String,
    pub document_epoch: u64,
}

/// What a session needs to know about an element before clicking it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ElementInfo {
    pub is_anchor: bool,
    /// Absolute href, resolved against the document URL.
    pub href: Option<String>,
    pub disabled: bool,
}

/// Primitive browser operations. Handles are only meaningful until the
/// next navigate, click or back; the session enforces that.
#[async_trait]
pub trait Backend: Send {
    fn session_id(&self) -> &str;
    async fn navigate(&mut self, url: &str) -> Result<(), DriverError>;
    async fn find(&mut self, selector: &Selector, scope: Option<&str>) -> Result<Vec<String>, DriverError>;
    async fn describe(&mut self, handle: &str) -> Result<ElementInfo, DriverError>;
    async fn click(&mut self, handle: &str) -> Result<(), DriverError>;
    async fn current_url(&mut self) -> Result<Option<String>, DriverError>;
    async fn back(&mut self) -> Result<(), DriverError>;
    async fn close(&mut self) -> Result<(), DriverError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Activity {
    pub in_flight: u64,
    pub quiet_for: Duration,
}

/// Source of the network-idle signal, normally the session's proxy.
pub trait IdleProbe: Send + Sync {
    fn activity(&self) -> Activity;
}

#[derive(Debug, Clone)]
pub struct DriverConfig {
    pub backend: BackendKind,
    /// `host:port` of the capture proxy; `None` connects directly.
    pub proxy_endpoint: Option<String>,
    pub user_agent: String,
    pub page_script: Option<Arc<PageScript>>,
    pub webdriver_endpoint: Option<String>,
    /// Extra trust anchors (PEM) for the mock backend's HTTP client.
    pub trust_pem: Vec<Vec<u8>>,
    /// Attempts added after a network-classified failure of a step.
    pub retries: u32,
    pub retry_delay_ms: u64,
    pub page_load_timeout_ms: u64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            proxy_endpoint: None,
            user_agent: DEFAULT_USER_AGENT.to_string(),
            page_script: None,
            webdriver_endpoint: None,
            trust_pem: Vec::new(),
            retries: 0,
            retry_delay_ms: 250,
            page_load_timeout_ms: PAGE_LOAD_TIMEOUT_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub category: String,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepTiming {
    pub step: usize,
    pub action: Option<usize>,
    pub op: String,
    pub ms: u64,
    pub status: StepStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepError {
    pub step: usize,
    pub action: Option<usize>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionReport {
    pub session_id: String,
    pub backend: BackendKind,
    pub inventory: Vec<InventoryEntry>,
    pub timings: Vec<StepTiming>,
    pub errors: Vec<StepError>,
    pub skipped: Vec<StepError>,
    pub clicks: u64,
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopExit {
    ElementAbsent,
    ElementDisabled,
    MaxIterations,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Done,
    Resolved(Vec<ElementRef>),
    Skipped(String),
    Looped { iterations: u32, exit: LoopExit },
}

/// Result of running a whole plan; the details live in the session report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Ok,
    Partial,
    Failed,
}

#[derive(Debug, Clone)]
struct Binding {
    selector: Selector,
    elements: Vec<ElementRef>,
    /// Snapshot of the first element taken at resolve time.
    info: Option<ElementInfo>,
    url_at_resolve: Option<String>,
    skipped: bool,
}

enum Signal {
    Continue,
    Stop(LoopExit),
}

pub struct DriverSession {
    backend: Box<dyn Backend>,
    kind: BackendKind,
    proxy_endpoint: Option<String>,
    user_agent: String,
    idle: Option<Arc<dyn IdleProbe>>,
    retries: u32,
    retry_delay: Duration,
    epoch: u64,
    bindings: HashMap<String, Binding>,
    inventory: Vec<InventoryEntry>,
    timings: Vec<StepTiming>,
    errors: Vec<StepError>,
    skipped: Vec<StepError>,
    clicks: u64,
    retries_used: u32,
    closed: Option<SessionReport>,
}

/// Opens a session of the configured backend. `idle` feeds `wait_idle`;
/// without it waits simply sleep for the quiet period.
pub async fn open_session(
    config: &DriverConfig,
    idle: Option<Arc<dyn IdleProbe>>,
) -> Result<DriverSession, DriverError> {
    let backend: Box<dyn Backend> = match config.backend {
        BackendKind::Mock => Box::new(mock::MockBackend::new(config)?),
        BackendKind::Webdriver => Box::new(webdriver::WebDriverBackend::connect(config).await?),
    };
    Ok(DriverSession::with_backend(backend, config, idle))
}

impl DriverSession {
    pub fn with_backend(
        backend: Box<dyn Backend>,
        config: &DriverConfig,
        idle: Option<Arc<dyn IdleProbe>>,
    ) -> Self {
        Self {
            backend,
            kind: config.backend,
            proxy_endpoint: config.proxy_endpoint.clone(),
            user_agent: config.user_agent.clone(),
            idle,
            retries: config.retries,
            retry_delay: Duration::from_millis(config.retry_delay_ms),
            epoch: 0,
            bindings: HashMap::new(),
            inventory: Vec::new(),
            timings: Vec::new(),
            errors: Vec::new(),
            skipped: Vec::new(),
            clicks: 0,
            retries_used: 0,
            closed: None,
        }
    }

    pub fn session_id(&self) -> &str {
        self.backend.session_id()
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.kind
    }

    pub fn proxy_endpoint(&self) -> Option<&str> {
        self.proxy_endpoint.as_deref()
    }

    pub fn user_agent(&self) -> &str {
        &self.user_agent
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn clicks(&self) -> u64 {
        self.clicks
    }

    pub fn inventory(&self) -> &[InventoryEntry] {
        &self.inventory
    }

    pub async fn current_url(&mut self) -> Result<Option<String>, DriverError> {
        self.live()?;
        self.backend.current_url().await
    }

    fn live(&self) -> Result<(), DriverError> {
        if self.closed.is_some() {
            Err(DriverError::SessionClosed)
        } else {
            Ok(())
        }
    }

    /// Runs every step in order. The first failing step aborts the plan.
    pub async fn execute_plan(&mut self, plan: &ActionPlan) -> PlanStatus {
        for (i, step) in plan.steps.iter().enumerate() {
            let started = Instant::now();
            let result = self.execute_step(step).await;
            let ms = started.elapsed().as_millis() as u64;
            let status = match &result {
                Ok(StepOutcome::Skipped(reason)) => {
                    self.note_skip(i, step.action, reason);
                    StepStatus::Skipped
                }
                Ok(StepOutcome::Looped {
                    exit: LoopExit::Skipped,
                    ..
                }) => {
                    self.note_skip(i, step.action, "loop body skipped");
                    StepStatus::Skipped
                }
                Ok(_) => StepStatus::Ok,
                Err(e) => {
                    self.errors.push(StepError {
                        step: i,
                        action: step.action,
                        kind: e.kind().into(),
                        message: e.to_string(),
                    });
                    StepStatus::Failed
                }
            };
            self.timings.push(StepTiming {
                step: i,
                action: step.action,
                op: step.op.to_string(),
                ms,
                status: status.clone(),
            });
            if status == StepStatus::Failed {
                return PlanStatus::Failed;
            }
        }
        if self.skipped.is_empty() {
            PlanStatus::Ok
        } else {
            PlanStatus::Partial
        }
    }

    /// One entry per skipped trace action, not per plan step.
    fn note_skip(&mut self, step: usize, action: Option<usize>, reason: &str) {
        if action.is_some() && self.skipped.last().is_some_and(|s| s.action == action) {
            return;
        }
        self.skipped.push(StepError {
            step,
            action,
            kind: "skipped".into(),
            message: reason.to_string(),
        });
    }

    pub async fn execute_step(&mut self, step: &PlanStep) -> Result<StepOutcome, DriverError> {
        self.live()?;
        match &step.op {
            StepOp::Loop {
                body,
                probe,
                until,
                max_iterations,
            } => self.run_loop(body, probe, *until, *max_iterations).await,
            op => self.primitive(op, None).await.map(|(o, _)| o),
        }
    }

    async fn run_loop(
        &mut self,
        body: &[PlanStep],
        probe: &str,
        until: Until,
        max_iterations: u32,
    ) -> Result<StepOutcome, DriverError> {
        let mut iterations = 0;
        while iterations < max_iterations {
            for s in body {
                let ctx = Some((probe, until, iterations));
                let (outcome, signal) = match &s.op {
                    StepOp::Loop { .. } => (Box::pin(self.execute_step(s)).await?, Signal::Continue),
                    op => self.primitive(op, ctx).await?,
                };
                if let Signal::Stop(exit) = signal {
                    return Ok(StepOutcome::Looped { iterations, exit });
                }
                if let StepOutcome::Skipped(_) = outcome {
                    return Ok(StepOutcome::Looped {
                        iterations,
                        exit: LoopExit::Skipped,
                    });
                }
            }
            iterations += 1;
        }
        Ok(StepOutcome::Looped {
            iterations,
            exit: LoopExit::MaxIterations,
        })
    }

    /// One primitive op with the retry policy applied.
    async fn primitive(
        &mut self,
        op: &StepOp,
        loop_ctx: Option<(&str, Until, u32)>,
    ) -> Result<(StepOutcome, Signal), DriverError> {
        let mut attempt = 0;
        loop {
            match self.primitive_once(op, loop_ctx).await {
                Err(e) if attempt < self.retries && retryable(&e, op) => {
                    attempt += 1;
                    self.retries_used += 1;
                    tokio::time::sleep(self.retry_delay).await;
                }
                other => return other,
            }
        }
    }

    async fn primitive_once(
        &mut self,
        op: &StepOp,
        loop_ctx: Option<(&str, Until, u32)>,
    ) -> Result<(StepOutcome, Signal), DriverError> {
        let done = |o| Ok((o, Signal::Continue));
        match op {
            StepOp::Navigate { url } => {
                self.epoch += 1;
                self.backend.navigate(url).await?;
                done(StepOutcome::Done)
            }
            StepOp::Resolve {
                selector,
                binding,
                on_missing,
            } => {
                let elements = self.resolve(selector, None).await?;
                let probe = loop_ctx.filter(|(p, _, _)| *p == binding.as_str());
                if elements.is_empty() {
                    if let Some((_, until, iteration)) = probe {
                        if until == Until::ElementAbsent || iteration > 0 {
                            return Ok((StepOutcome::Resolved(vec![]), Signal::Stop(LoopExit::ElementAbsent)));
                        }
                    }
                    return match on_missing {
                        OnMissing::Fail => Err(DriverError::ElementNotFound(selector.to_string())),
                        OnMissing::Skip => {
                            self.bindings.insert(
                                binding.clone(),
                                Binding {
                                    selector: selector.clone(),
                                    elements: vec![],
                                    info: None,
                                    url_at_resolve: None,
                                    skipped: true,
                                },
                            );
                            done(StepOutcome::Skipped(format!("no element matches {selector}")))
                        }
                    };
                }
                let info = self.backend.describe(&elements[0].handle).await?;
                let url_at_resolve = self.backend.current_url().await?;
                let disabled = info.disabled;
                self.bindings.insert(
                    binding.clone(),
                    Binding {
                        selector: selector.clone(),
                        elements: elements.clone(),
                        info: Some(info),
                        url_at_resolve,
                        skipped: false,
                    },
                );
                if let Some((_, Until::ElementDisabled, _)) = probe {
                    if disabled {
                        return Ok((StepOutcome::Resolved(elements), Signal::Stop(LoopExit::ElementDisabled)));
                    }
                }
                done(StepOutcome::Resolved(elements))
            }
            StepOp::Click { binding } => {
                let b = self.binding(binding)?;
                if b.skipped {
                    return done(StepOutcome::Skipped(format!("{binding} was skipped")));
                }
                let el = b.elements[0].clone();
                self.check_epoch(&el)?;
                self.clicks += 1;
                self.epoch += 1;
                self.backend.click(&el.handle).await?;
                done(StepOutcome::Done)
            }
            StepOp::WaitIdle { quiet_ms, cap_ms } => {
                self.wait_idle(*quiet_ms, *cap_ms).await;
                done(StepOutcome::Done)
            }
            StepOp::RecordTarget { binding, category } => {
                let b = self.binding(binding)?.clone();
                if b.skipped {
                    return done(StepOutcome::Skipped(format!("{binding} was skipped")));
                }
                let now = self.backend.current_url().await?;
                if let Some(uri) = target_of(b.info.as_ref(), b.url_at_resolve.as_deref(), now.as_deref()) {
                    self.inventory.push(InventoryEntry {
                        category: category.clone(),
                        uri,
                    });
                }
                done(StepOutcome::Done)
            }
            StepOp::ClickEachAndReturn {
                scope,
                links,
                quiet_ms,
                cap_ms,
                category,
            } => {
                let b = self.binding(scope)?.clone();
                if b.skipped {
                    return done(StepOutcome::Skipped(format!("{scope} was skipped")));
                }
                self.click_each(&b, links, *quiet_ms, *cap_ms, category).await?;
                done(StepOutcome::Done)
            }
            StepOp::Loop { .. } => unreachable!("loops are handled by run_loop"),
        }
    }

    async fn resolve(&mut self, selector: &Selector, scope: Option<&ElementRef>) -> Result<Vec<ElementRef>, DriverError> {
        if let Some(s) = scope {
            self.check_epoch(s)?;
        }
        let handles = self.backend.find(selector, scope.map(|s| s.handle.as_str())).await?;
        Ok(handles
            .into_iter()
            .map(|handle| ElementRef {
                handle,
                document_epoch: self.epoch,
            })
            .collect())
    }

    fn binding(&self, name: &str) -> Result<&Binding, DriverError> {
        self.bindings
            .get(name)
            .ok_or_else(|| DriverError::UnknownBinding(name.to_string()))
    }

    fn check_epoch(&self, el: &ElementRef) -> Result<(), DriverError> {
        if el.document_epoch != self.epoch {
            Err(DriverError::StaleElement(el.handle.clone()))
        } else {
            Ok(())
        }
    }

    /// Visits every link found inside the scope, as snapshotted now, and
    /// comes back to the origin page after each one.
    async fn click_each(
        &mut self,
        scope: &Binding,
        links: &Selector,
        quiet_ms: u64,
        cap_ms: u64,
        category: &str,
    ) -> Result<(), DriverError> {
        let origin = self.backend.current_url().await?;
        let scope_el = scope.elements[0].clone();
        let snapshot = self.resolve(links, Some(&scope_el)).await?;
        let mut infos = Vec::with_capacity(snapshot.len());
        for el in &snapshot {
            infos.push(self.backend.describe(&el.handle).await?);
        }
        // Rebuilding the scope after each return lets links be clicked rather
        // than loaded, which keeps download and scripted links faithful.
        let mut current = snapshot;
        for (i, info) in infos.iter().enumerate() {
            if i > 0 {
                current = self.relocate(&scope.selector, links).await?;
            }
            let here = self.backend.current_url().await?;
            let same_link = match current.get(i) {
                Some(el) if current.len() == infos.len() => self.backend.describe(&el.handle).await?.href == info.href,
                _ => false,
            };
            self.epoch += 1;
            self.clicks += 1;
            if same_link {
                let handle = current[i].handle.clone();
                self.backend.click(&handle).await?;
            } else if let Some(href) = &info.href {
                self.backend.navigate(href).await?;
            } else {
                return Err(DriverError::StaleElement(format!("link {i} of {links}")));
            }
            self.wait_idle(quiet_ms, cap_ms).await;
            let after = self.backend.current_url().await?;
            if let Some(uri) = target_of(Some(info), here.as_deref(), after.as_deref()) {
                self.inventory.push(InventoryEntry {
                    category: category.to_string(),
                    uri,
                });
            }
            if after != origin {
                self.epoch += 1;
                self.backend.back().await?;
                if self.backend.current_url().await? != origin {
                    if let Some(o) = &origin {
                        self.backend.navigate(o).await?;
                    }
                }
            }
        }
        Ok(())
    }

    async fn relocate(&mut self, scope_sel: &Selector, links: &Selector) -> Result<Vec<ElementRef>, DriverError> {
        let scopes = self.resolve(scope_sel, None).await?;
        match scopes.first() {
            Some(s) => {
                let s = s.clone();
                self.resolve(links, Some(&s)).await
            }
            None => Ok(Vec::new()),
        }
    }

    async fn wait_idle(&self, quiet_ms: u64, cap_ms: u64) {
        let quiet = Duration::from_millis(quiet_ms);
        let Some(probe) = &self.idle else {
            tokio::time::sleep(quiet.min(Duration::from_millis(cap_ms))).await;
            return;
        };
        let start = Instant::now();
        let cap = Duration::from_millis(cap_ms);
        let tick = Duration::from_millis((quiet_ms / 4).clamp(1, 25));
        loop {
            let a = probe.activity();
            // Silence is measured from the start of the wait at the earliest,
            // so traffic the click has not issued yet is not mistaken for quiet.
            let silent = a.quiet_for.min(start.elapsed());
            if a.in_flight == 0 && silent >= quiet {
                return;
            }
            if start.elapsed() >= cap {
                return;
            }
            tokio::time::sleep(tick).await;
        }
    }

    /// Releases the browser and returns the report. Later calls return the
    /// same report without touching the backend again.
    pub async fn close_session(&mut self) -> SessionReport {
        if let Some(r) = &self.closed {
            return r.clone();
        }
        if let Err(e) = self.backend.close().await {
            self.errors.push(StepError {
                step: self.timings.len(),
                action: None,
                kind: "teardown".into(),
                message: e.to_string(),
            });
        }
        let report = SessionReport {
            session_id: self.backend.session_id().to_string(),
            backend: self.kind,
            inventory: std::mem::take(&mut self.inventory),
            timings: std::mem::take(&mut self.timings),
            errors: std::mem::take(&mut self.errors),
            skipped: std::mem::take(&mut self.skipped),
            clicks: self.clicks,
            retries: self.retries_used,
        };
        self.closed = Some(report.clone());
        report
    }
}

fn retryable(e: &DriverError, op: &StepOp) -> bool {
    e.is_network()
        || matches!(
            (e, op),
            (
                DriverError::ElementNotFound(_),
                StepOp::Resolve {
                    on_missing: OnMissing::Fail,
                    ..
                }
            )
        )
}

/// Anchors record their href; anything else records where the click led,
/// if it led anywhere.
fn target_of(info: Option<&ElementInfo>, before: Option<&str>, after: Option<&str>) -> Option<String> {
    if let Some(ElementInfo {
        is_anchor: true,
        href: Some(h),
        ..
    }) = info
    {
        return Some(h.clone());
    }
    match (before, after) {
        (b, Some(a)) if b != Some(a) => Some(a.to_string()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_record_href_others_record_navigation() {
        let a = ElementInfo {
            is_anchor: true,
            href: Some("https://h/f".into()),
            disabled: false,
        };
        assert_eq!(target_of(Some(&a), Some("https://h/"), Some("https://h/")).as_deref(), Some("https://h/f"));
        let b = ElementInfo::default();
        assert_eq!(target_of(Some(&b), Some("https://h/1"), Some("https://h/2")).as_deref(), Some("https://h/2"));
        assert_eq!(target_of(Some(&b), Some("https://h/1"), Some("https://h/1")), None);
    }

    #[test]
    fn network_classification() {
        assert!(DriverError::Network("reset".into()).is_network());
        assert!(DriverError::NavigationTimeout("u".into()).is_network());
        assert!(!DriverError::ElementNotFound("x".into()).is_network());
        assert!(is_gateway_status(503) && !is_gateway_status(500));
    }
}
