use serde::Serialize;
use url::Url;

use super::{ActionKind, Selector, SelectorStrategy, Trace, Until, MAX_ITERATIONS_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    /// Path of the offending field, e.g. `actions[2].link_selector`.
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    fn error(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        });
    }
}

fn valid_id(id: &str) -> bool {
    let mut bytes = id.bytes();
    matches!(bytes.next(), Some(b'a'..=b'z' | b'0'..=b'9'))
        && bytes.all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'-'))
}

fn check_selector(report: &mut ValidationReport, field: &str, sel: &Option<Selector>, needed: bool) {
    match sel {
        None if needed => report.error(field, "required for this action kind"),
        None => {}
        Some(_) if !needed => report.warn(field, "ignored for this action kind"),
        Some(s) => {
            if s.value.trim().is_empty() {
                report.error(format!("{field}.value"), "selector value is empty");
            } else if s.strategy == SelectorStrategy::ElementId
                && s.value.chars().any(char::is_whitespace)
            {
                report.error(format!("{field}.value"), "element id contains whitespace");
            }
        }
    }
}

/// Lists every invariant violation as an error, plus advisory warnings.
pub fn validate_trace(t: &Trace) -> ValidationReport {
    let mut r = ValidationReport::default();
    if !valid_id(&t.id) {
        r.error("id", "must match [a-z0-9][a-z0-9-]*");
    }
    if !t.url_pattern.has_http_scheme() {
        r.error("url_pattern", "must begin with http:// or https://");
    }
    if t.actions.is_empty() {
        r.error("actions", "at least one action is required");
    }
    for (i, a) in t.actions.iter().enumerate() {
        let p = format!("actions[{i}]");
        let (sel, scoped) = match a.kind {
            ActionKind::Click | ActionKind::RepeatClick => (true, false),
            ActionKind::ClickAll => (false, true),
        };
        check_selector(&mut r, &format!("{p}.selector"), &a.selector, sel);
        check_selector(&mut r, &format!("{p}.scope_selector"), &a.scope_selector, scoped);
        check_selector(&mut r, &format!("{p}.link_selector"), &a.link_selector, scoped);
        if a.kind == ActionKind::RepeatClick {
            match a.until {
                None => r.error(format!("{p}.until"), "repeat-click requires a termination condition"),
                Some(Until::MaxOnly) => match a.max_iterations {
                    None => r.error(
                        format!("{p}.max_iterations"),
                        "until=max-only requires an explicit max_iterations",
                    ),
                    Some(n) if n > 1000 && n <= MAX_ITERATIONS_LIMIT => r.warn(
                        format!("{p}.max_iterations"),
                        format!("max-only repeat-click will click {n} times"),
                    ),
                    _ => {}
                },
                Some(_) => {}
            }
            if let Some(n) = a.max_iterations {
                if n == 0 || n > MAX_ITERATIONS_LIMIT {
                    r.error(
                        format!("{p}.max_iterations"),
                        format!("must be between 1 and {MAX_ITERATIONS_LIMIT}"),
                    );
                }
            }
        } else {
            if a.until.is_some() {
                r.warn(format!("{p}.until"), "ignored for this action kind");
            }
            if a.max_iterations.is_some() {
                r.warn(format!("{p}.max_iterations"), "ignored for this action kind");
            }
        }
    }
    for (idx, label) in &t.categories {
        if *idx >= t.actions.len() {
            r.error(format!("categories.{idx}"), "not a valid action index");
        }
        if label.trim().is_empty() {
            r.error(format!("categories.{idx}"), "empty category label");
        }
    }
    match Url::parse(&t.provenance.created_on) {
        Ok(u) if matches!(u.scheme(), "http" | "https") && u.host_str().is_some() => {}
        _ => r.error("provenance.created_on", "must be an absolute http(s) URI"),
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Provenance, TraceAction, UrlPattern};
    use chrono::DateTime;

    fn trace(actions: Vec<TraceAction>) -> Trace {
        let mut t = Trace::new(
            "t1",
            UrlPattern::new("https://example.com/*"),
            Provenance {
                created_on: "https://example.com/a".into(),
                user_agent: "UA".into(),
                created_at: DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z").unwrap(),
                curator: None,
            },
        );
        t.actions = actions;
        t
    }

    #[test]
    fn valid_trace_has_empty_report() {
        let t = trace(vec![TraceAction::click(Selector::id("go"))]);
        assert!(validate_trace(&t).is_empty());
    }

    #[test]
    fn click_all_without_link_selector() {
        let mut a = TraceAction::click_all(Selector::id("list"), Selector::css("a"));
        a.link_selector = None;
        let report = validate_trace(&trace(vec![a]));
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].severity, Severity::Error);
        assert_eq!(report.findings[0].field, "actions[0].link_selector");
    }

    #[test]
    fn large_max_only_warns() {
        let a = TraceAction::repeat_click(Selector::id("next"), Until::MaxOnly, Some(5000));
        let report = validate_trace(&trace(vec![a]));
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].severity, Severity::Warning);
    }

    #[test]
    fn max_only_needs_explicit_bound() {
        let a = TraceAction::repeat_click(Selector::id("next"), Until::MaxOnly, None);
        assert!(validate_trace(&trace(vec![a])).has_errors());
    }

    #[test]
    fn other_invariants() {
        let mut t = trace(vec![]);
        t.id = "Bad_Id".into();
        t.url_pattern = UrlPattern::new("ftp://x/*");
        t.categories.insert(3, "files".into());
        t.provenance.created_on = "/relative".into();
        let fields: Vec<_> = validate_trace(&t).errors().map(|f| f.field.clone()).collect();
        assert_eq!(
            fields,
            ["id", "url_pattern", "actions", "categories.3", "provenance.created_on"]
        );
        let t = trace(vec![TraceAction::click(Selector::id("has space"))]);
        assert!(validate_trace(&t).has_errors());
        let t = trace(vec![TraceAction::repeat_click(
            Selector::id("n"),
            Until::ElementAbsent,
            Some(10_001),
        )]);
        assert!(validate_trace(&t).has_errors());
    }
}
