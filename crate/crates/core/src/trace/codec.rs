//! JSON reading and canonical writing of trace documents.
//!
//! Canonical form: keys in the order `trace_version, id, url_pattern,
//! actions, categories, provenance`, then unknown top-level keys sorted;
//! action keys `kind, selector, scope_selector, link_selector, until,
//! max_iterations, wait_after_ms, on_missing`; two-space indentation and a
//! trailing newline. Defaults are written out explicitly.

use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use thiserror::Error;

use super::validate::{validate_trace, Severity};
use super::{
    ActionKind, OnMissing, Provenance, Selector, Trace, TraceAction, UrlPattern,
    DEFAULT_WAIT_AFTER_MS, TRACE_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace is not well-formed JSON: {0}")]
    Syntax(String),
    #[error("schema error at `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("unsupported trace_version {0:?}")]
    Version(String),
}

impl TraceError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        TraceError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Field path for schema errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            TraceError::Schema { field, .. } => Some(field),
            _ => None,
        }
    }
}

type Result<T> = std::result::Result<T, TraceError>;

const TOP_LEVEL: &[&str] = &[
    "trace_version",
    "id",
    "url_pattern",
    "actions",
    "categories",
    "provenance",
];

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .filter(|v| !v.is_null())
        .ok_or_else(|| TraceError::schema(join(path, key), "missing required field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_str<'a>(v: &'a Value, field: &str) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| TraceError::schema(field, "expected a string"))
}

fn as_obj<'a>(v: &'a Value, field: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| TraceError::schema(field, "expected an object"))
}

fn enum_value<T: DeserializeOwned>(v: &Value, field: &str) -> Result<T> {
    serde_json::from_value(v.clone())
        .map_err(|_| TraceError::schema(field, format!("unrecognized value {v}")))
}

fn opt_selector(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<Selector>> {
    let field = join(path, key);
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            let o = as_obj(v, &field)?;
            let strategy = enum_value(required(o, "strategy", &field)?, &join(&field, "strategy"))?;
            let value = as_str(required(o, "value", &field)?, &join(&field, "value"))?;
            Ok(Some(Selector::new(strategy, value)))
        }
    }
}

fn opt_uint(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<u64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| TraceError::schema(join(path, key), "expected a non-negative integer")),
    }
}

fn parse_action(v: &Value, path: &str) -> Result<TraceAction> {
    let o = as_obj(v, path)?;
    let kind: ActionKind = enum_value(required(o, "kind", path)?, &join(path, "kind"))?;
    let until = match o.get("until") {
        None | Some(Value::Null) => None,
        Some(u) => Some(enum_value(u, &join(path, "until"))?),
    };
    let max_iterations = match opt_uint(o, "max_iterations", path)? {
        None => None,
        Some(n) => Some(u32::try_from(n).map_err(|_| {
            TraceError::schema(join(path, "max_iterations"), "out of range")
        })?),
    };
    let on_missing = match o.get("on_missing") {
        None | Some(Value::Null) => OnMissing::Fail,
        Some(m) => enum_value(m, &join(path, "on_missing"))?,
    };
    Ok(TraceAction {
        kind,
        selector: opt_selector(o, "selector", path)?,
        scope_selector: opt_selector(o, "scope_selector", path)?,
        link_selector: opt_selector(o, "link_selector", path)?,
        until,
        max_iterations,
        wait_after_ms: opt_uint(o, "wait_after_ms", path)?.unwrap_or(DEFAULT_WAIT_AFTER_MS),
        on_missing,
    })
}

fn parse_provenance(v: &Value) -> Result<Provenance> {
    let path = "provenance";
    let o = as_obj(v, path)?;
    let created_at_raw = as_str(required(o, "created_at", path)?, "provenance.created_at")?;
    let created_at = DateTime::parse_from_rfc3339(created_at_raw)
        .map_err(|e| TraceError::schema("provenance.created_at", format!("not RFC 3339: {e}")))?;
    let curator = match o.get("curator") {
        None | Some(Value::Null) => None,
        Some(c) => Some(as_str(c, "provenance.curator")?.to_string()),
    };
    Ok(Provenance {
        created_on: as_str(required(o, "created_on", path)?, "provenance.created_on")?.to_string(),
        user_agent: as_str(required(o, "user_agent", path)?, "provenance.user_agent")?.to_string(),
        created_at,
        curator,
    })
}

fn parse_categories(v: Option<&Value>) -> Result<BTreeMap<usize, String>> {
    let mut out = BTreeMap::new();
    let Some(v) = v.filter(|v| !v.is_null()) else {
        return Ok(out);
    };
    for (k, label) in as_obj(v, "categories")? {
        let field = format!("categories.{k}");
        let idx: usize = k
            .parse()
            .map_err(|_| TraceError::schema(&field, "key is not an action index"))?;
        out.insert(idx, as_str(label, &field)?.to_string());
    }
    Ok(out)
}

/// Structural parse: JSON well-formedness, required fields, field types and
/// the schema version. Kind-dependent rules are left to [`validate_trace`].
pub fn parse_trace_lenient(bytes: &[u8]) -> Result<Trace> {
    let text = std::str::from_utf8(bytes).map_err(|e| TraceError::Syntax(e.to_string()))?;
    let doc: Value = serde_json::from_str(text).map_err(|e| TraceError::Syntax(e.to_string()))?;
    let root = doc
        .as_object()
        .ok_or_else(|| TraceError::schema("$", "document must be a JSON object"))?;
    let version = as_str(required(root, "trace_version", "")?, "trace_version")?;
    if version != TRACE_VERSION {
        return Err(TraceError::Version(version.to_string()));
    }
    let id = as_str(required(root, "id", "")?, "id")?;
    let url_pattern = as_str(required(root, "url_pattern", "")?, "url_pattern")?;
    let actions = required(root, "actions", "")?
        .as_array()
        .ok_or_else(|| TraceError::schema("actions", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, a)| parse_action(a, &format!("actions[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let provenance = parse_provenance(required(root, "provenance", "")?)?;
    let categories = parse_categories(root.get("categories"))?;
    let mut extra = Map::new();
    let mut unknown: Vec<_> = root
        .iter()
        .filter(|(k, _)| !TOP_LEVEL.contains(&k.as_str()))
        .collect();
    unknown.sort_by(|a, b| a.0.cmp(b.0));
    for (k, v) in unknown {
        extra.insert(k.clone(), v.clone());
    }
    Ok(Trace {
        trace_version: version.to_string(),
        id: id.to_string(),
        url_pattern: UrlPattern::new(url_pattern),
        actions,
        provenance,
        categories,
        extra,
    })
}

/// Parses and fully validates a trace. The first error finding is reported
/// as a schema error naming its field.
pub fn parse_trace(bytes: &[u8]) -> Result<Trace> {
    let trace = parse_trace_lenient(bytes)?;
    let report = validate_trace(&trace);
    if let Some(f) = report
        .findings
        .iter()
        .find(|f| f.severity == Severity::Error)
    {
        return Err(TraceError::schema(&f.field, &f.message));
    }
    Ok(trace)
}

fn selector_value(s: &Selector) -> Value {
    let mut m = Map::new();
    m.insert("strategy".into(), Value::from(s.strategy.as_str()));
    m.insert("value".into(), Value::from(s.value.clone()));
    Value::Object(m)
}

fn action_value(a: &TraceAction) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), Value::from(a.kind.as_str()));
    for (key, sel) in [
        ("selector", &a.selector),
        ("scope_selector", &a.scope_selector),
        ("link_selector", &a.link_selector),
    ] {
        if let Some(s) = sel {
            m.insert(key.into(), selector_value(s));
        }
    }
    if let Some(u) = a.until {
        m.insert("until".into(), Value::from(u.as_str()));
    }
    if let Some(n) = a.max_iterations {
        m.insert("max_iterations".into(), Value::from(n));
    }
    m.insert("wait_after_ms".into(), Value::from(a.wait_after_ms));
    m.insert("on_missing".into(), Value::from(a.on_missing.as_str()));
    Value::Object(m)
}

fn trace_value(t: &Trace) -> Value {
    let mut m = Map::new();
    m.insert("trace_version".into(), Value::from(t.trace_version.clone()));
    m.insert("id".into(), Value::from(t.id.clone()));
    m.insert("url_pattern".into(), Value::from(t.url_pattern.as_str()));
    m.insert(
        "actions".into(),
        Value::Array(t.actions.iter().map(action_value).collect()),
    );
    if !t.categories.is_empty() {
        let cats: Map<String, Value> = t
            .categories
            .iter()
            .map(|(k, v)| (k.to_string(), Value::from(v.clone())))
            .collect();
        m.insert("categories".into(), Value::Object(cats));
    }
    let p = &t.provenance;
    let mut pm = Map::new();
    pm.insert("created_on".into(), Value::from(p.created_on.clone()));
    pm.insert("user_agent".into(), Value::from(p.user_agent.clone()));
    pm.insert("created_at".into(), Value::from(p.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true)));
    if let Some(c) = &p.curator {
        pm.insert("curator".into(), Value::from(c.clone()));
    }
    m.insert("provenance".into(), Value::Object(pm));
    let mut extra: Vec<_> = t.extra.iter().collect();
    extra.sort_by(|a, b| a.0.cmp(b.0));
    for (k, v) in extra {
        m.insert(k.clone(), v.clone());
    }
    Value::Object(m)
}

/// Canonical serialization; equal traces give identical bytes.
pub fn serialize_trace(t: &Trace) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&trace_value(t)).expect("trace values serialize");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SelectorStrategy;

    const MINIMAL: &str = r##"{
        "trace_version": "1.0",
        "id": "demo",
        "url_pattern": "https://example.com/*",
        "actions": [{"kind": "click", "selector": {"strategy": "css", "value": "#go"}}],
        "provenance": {"created_on": "https://example.com/a", "user_agent": "UA", "created_at": "2026-01-01T00:00:00Z"}
    }"##;

    #[test]
    fn minimal_fills_defaults() {
        let t = parse_trace(MINIMAL.as_bytes()).unwrap();
        assert_eq!(t.actions.len(), 1);
        assert_eq!(t.actions[0].wait_after_ms, 2000);
        assert_eq!(t.actions[0].on_missing, OnMissing::Fail);
        assert_eq!(
            t.actions[0].selector,
            Some(Selector::new(SelectorStrategy::Css, "#go"))
        );
    }

    #[test]
    fn missing_url_pattern_names_field() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        v.as_object_mut().unwrap().remove("url_pattern");
        let err = parse_trace(v.to_string().as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("url_pattern"));
    }

    #[test]
    fn syntax_and_version_errors() {
        assert!(matches!(parse_trace(b"{not json"), Err(TraceError::Syntax(_))));
        let bumped = MINIMAL.replace("\"1.0\"", "\"2.0\"");
        assert_eq!(
            parse_trace(bumped.as_bytes()),
            Err(TraceError::Version("2.0".into()))
        );
    }

    #[test]
    fn ill_typed_field_is_schema_error() {
        let bad = MINIMAL.replace("\"kind\": \"click\"", "\"kind\": \"hover\"");
        assert_eq!(
            parse_trace(bad.as_bytes()).unwrap_err().field(),
            Some("actions[0].kind")
        );
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let with_extra = MINIMAL.replacen('{', "{\"x-note\": {\"a\": 1},", 1);
        let t = parse_trace(with_extra.as_bytes()).unwrap();
        assert_eq!(t.extra.get("x-note").unwrap()["a"], 1);
        let again = parse_trace(&serialize_trace(&t)).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn canonical_layout() {
        let t = parse_trace(MINIMAL.as_bytes()).unwrap();
        let text = String::from_utf8(serialize_trace(&t)).unwrap();
        assert!(text.starts_with("{\n  \"trace_version\": \"1.0\",\n  \"id\": \"demo\",\n"));
        assert!(text.ends_with("}\n"));
        assert!(text.find("\"actions\"").unwrap() < text.find("\"provenance\"").unwrap());
    }
}
