//! The trace interchange format.
//!
//! A trace is a class-level recipe: a URL pattern saying which pages it
//! applies to, an ordered list of click actions identified by selectors, and
//! provenance describing where and with which user agent it was recorded. It
//! never names the concrete resources a replay will reach.

mod codec;
mod pattern;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

pub use codec::{parse_trace, parse_trace_lenient, serialize_trace, TraceError};
pub use pattern::{match_url, InvalidUrl, UrlPattern};
pub use validate::{validate_trace, Finding, Severity, ValidationReport};

pub const TRACE_VERSION: &str = "1.0";
pub const DEFAULT_WAIT_AFTER_MS: u64 = 2000;
pub const DEFAULT_MAX_ITERATIONS: u32 = 1000;
pub const MAX_ITERATIONS_LIMIT: u32 = 10_000;
/// Category label for actions the trace does not categorize.
pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorStrategy {
    ElementId,
    HtmlClass,
    Css,
    Xpath,
}

impl SelectorStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectorStrategy::ElementId => "element-id",
            SelectorStrategy::HtmlClass => "html-class",
            SelectorStrategy::Css => "css",
            SelectorStrategy::Xpath => "xpath",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selector {
    pub strategy: SelectorStrategy,
    pub value: String,
}

impl Selector {
    pub fn new(strategy: SelectorStrategy, value: impl Into<String>) -> Self {
        Self {
            strategy,
            value: value.into(),
        }
    }

    pub fn id(value: impl Into<String>) -> Self {
        Self::new(SelectorStrategy::ElementId, value)
    }

    pub fn class(value: impl Into<String>) -> Self {
        Self::new(SelectorStrategy::HtmlClass, value)
    }

    pub fn css(value: impl Into<String>) -> Self {
        Self::new(SelectorStrategy::Css, value)
    }

    pub fn xpath(value: impl Into<String>) -> Self {
        Self::new(SelectorStrategy::Xpath, value)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({:?})", self.strategy.as_str(), self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Click,
    ClickAll,
    RepeatClick,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::ClickAll => "click-all",
            ActionKind::RepeatClick => "repeat-click",
        }
    }
}

/// Termination condition of a repeat-click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Until {
    ElementAbsent,
    /// The element carries a `disabled` attribute or `aria-disabled="true"`.
    ElementDisabled,
    MaxOnly,
}

impl Until {
    pub fn as_str(self) -> &'static str {
        match self {
            Until::ElementAbsent => "element-absent",
            Until::ElementDisabled => "element-disabled",
            Until::MaxOnly => "max-only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnMissing {
    #[default]
    Fail,
    Skip,
}

impl OnMissing {
    pub fn as_str(self) -> &'static str {
        match self {
            OnMissing::Fail => "fail",
            OnMissing::Skip => "skip",
        }
    }
}

/// One recorded interaction. Which selector fields are meaningful depends on
/// `kind`; [`validate_trace`] reports missing ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceAction {
    pub kind: ActionKind,
    pub selector: Option<Selector>,
    pub scope_selector: Option<Selector>,
    pub link_selector: Option<Selector>,
    pub until: Option<Until>,
    pub max_iterations: Option<u32>,
    pub wait_after_ms: u64,
    pub on_missing: OnMissing,
}

impl TraceAction {
    fn base(kind: ActionKind) -> Self {
        Self {
            kind,
            selector: None,
            scope_selector: None,
            link_selector: None,
            until: None,
            max_iterations: None,
            wait_after_ms: DEFAULT_WAIT_AFTER_MS,
            on_missing: OnMissing::Fail,
        }
    }

    pub fn click(selector: Selector) -> Self {
        Self {
            selector: Some(selector),
            ..Self::base(ActionKind::Click)
        }
    }

    pub fn click_all(scope: Selector, link: Selector) -> Self {
        Self {
            scope_selector: Some(scope),
            link_selector: Some(link),
            ..Self::base(ActionKind::ClickAll)
        }
    }

    pub fn repeat_click(selector: Selector, until: Until, max_iterations: Option<u32>) -> Self {
        Self {
            selector: Some(selector),
            until: Some(until),
            max_iterations,
            ..Self::base(ActionKind::RepeatClick)
        }
    }

    pub fn with_wait(mut self, ms: u64) -> Self {
        self.wait_after_ms = ms;
        self
    }

    pub fn with_on_missing(mut self, on_missing: OnMissing) -> Self {
        self.on_missing = on_missing;
        self
    }

    /// Iteration bound of a repeat-click, defaulted.
    pub fn effective_max_iterations(&self) -> u32 {
        self.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub created_on: String,
    pub user_agent: String,
    pub created_at: DateTime<FixedOffset>,
    pub curator: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trace_version: String,
    pub id: String,
    pub url_pattern: UrlPattern,
    pub actions: Vec<TraceAction>,
    pub provenance: Provenance,
    /// Action index → category label.
    pub categories: BTreeMap<usize, String>,
    /// Unknown top-level fields, kept so that re-serialization preserves them.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Trace {
    pub fn new(id: impl Into<String>, url_pattern: UrlPattern, provenance: Provenance) -> Self {
        Self {
            trace_version: TRACE_VERSION.to_string(),
            id: id.into(),
            url_pattern,
            actions: Vec::new(),
            provenance,
            categories: BTreeMap::new(),
            extra: serde_json::Map::new(),
        }
    }

    pub fn push(mut self, action: TraceAction, category: Option<&str>) -> Self {
        if let Some(c) = category {
            self.categories.insert(self.actions.len(), c.to_string());
        }
        self.actions.push(action);
        self
    }

    pub fn category(&self, action_index: usize) -> &str {
        self.categories
            .get(&action_index)
            .map(String::as_str)
            .unwrap_or(UNCATEGORIZED)
    }
}
