//! W3C WebDriver client: plain HTTP+JSON to a protocol endpoint such as
//! chromedriver, geckodriver or a Selenium server.

use std::time::Duration;

use async_trait::async_trait;
use reqwest::Method;
use serde_json::{json, Value};

use super::{Backend, DriverConfig, DriverError, ElementInfo};
use crate::trace::{Selector, SelectorStrategy};

/// Key under which W3C endpoints return element references.
pub const ELEMENT_KEY: &str = "element-6066-11e4-a07c-4e6f6d6c6c6e";

pub struct WebDriverBackend {
    http: reqwest::Client,
    base: String,
    session: String,
    closed: bool,
}

/// Capabilities for a browser that sends everything through `proxy` and
/// trusts the proxy's interception certificates.
pub fn capabilities(config: &DriverConfig) -> Value {
    let mut always = json!({
        "acceptInsecureCerts": true,
        "pageLoadStrategy": "normal",
        "timeouts": { "pageLoad": config.page_load_timeout_ms },
        "goog:chromeOptions": {
            "args": chrome_args(config),
        },
        "moz:firefoxOptions": {
            "args": ["-headless"],
            "prefs": {
                "general.useragent.override": config.user_agent,
                "network.proxy.allow_hijacking_localhost": true,
            },
        },
    });
    if let Some(ep) = &config.proxy_endpoint {
        always["proxy"] = json!({
            "proxyType": "manual",
            "httpProxy": ep,
            "sslProxy": ep,
        });
    }
    json!({ "capabilities": { "alwaysMatch": always } })
}

fn chrome_args(config: &DriverConfig) -> Vec<String> {
    let mut args = vec![
        "--headless=new".to_string(),
        "--no-sandbox".to_string(),
        "--disable-gpu".to_string(),
        format!("--user-agent={}", config.user_agent),
    ];
    if let Some(ep) = &config.proxy_endpoint {
        args.push(format!("--proxy-server=http://{ep}"));
        // Chrome bypasses proxies for loopback hosts unless told otherwise.
        args.push("--proxy-bypass-list=<-loopback>".to_string());
    }
    args
}

fn css_string(v: &str) -> String {
    let mut out = String::with_capacity(v.len() + 2);
    out.push('"');
    for c in v.chars() {
        match c {
            '"' | '\\' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\a "),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Maps a trace selector to a WebDriver locator strategy and value.
pub fn locator(sel: &Selector) -> (&'static str, String) {
    match sel.strategy {
        SelectorStrategy::ElementId => ("css selector", format!("[id={}]", css_string(&sel.value))),
        SelectorStrategy::HtmlClass => (
            "css selector",
            sel.value
                .split_whitespace()
                .map(|c| format!("[class~={}]", css_string(c)))
                .collect(),
        ),
        SelectorStrategy::Css => ("css selector", sel.value.clone()),
        SelectorStrategy::Xpath => ("xpath", sel.value.clone()),
    }
}

fn protocol_error(status: u16, body: &Value, context: &str) -> DriverError {
    let error = body["value"]["error"].as_str().unwrap_or("unknown error").to_string();
    let message = body["value"]["message"].as_str().unwrap_or_default().to_string();
    match error.as_str() {
        "no such element" => DriverError::ElementNotFound(context.to_string()),
        "stale element reference" => DriverError::StaleElement(context.to_string()),
        "timeout" => DriverError::NavigationTimeout(context.to_string()),
        "session not created" | "invalid argument" if context == "new session" => {
            DriverError::CapabilityRejected(message)
        }
        "invalid session id" => DriverError::SessionClosed,
        _ => DriverError::Backend {
            status: format!("{status} {error}"),
            message,
        },
    }
}

impl WebDriverBackend {
    pub async fn connect(config: &DriverConfig) -> Result<Self, DriverError> {
        let base = config
            .webdriver_endpoint
            .clone()
            .ok_or_else(|| DriverError::DriverUnreachable("no webdriver endpoint configured".into()))?;
        let base = base.trim_end_matches('/').to_string();
        let http = reqwest::Client::builder()
            .no_proxy()
            .timeout(Duration::from_millis(config.page_load_timeout_ms + 30_000))
            .connect_timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| DriverError::DriverUnreachable(e.to_string()))?;
        let resp = http
            .post(format!("{base}/session"))
            .json(&capabilities(config))
            .send()
            .await
            .map_err(|e| DriverError::DriverUnreachable(format!("{base}: {e}")))?;
        let status = resp.status().as_u16();
        let body: Value = resp
            .json()
            .await
            .map_err(|e| DriverError::DriverUnreachable(format!("{base}: {e}")))?;
        if status >= 400 {
            return Err(match protocol_error(status, &body, "new session") {
                e @ DriverError::CapabilityRejected(_) => e,
                e => DriverError::CapabilityRejected(e.to_string()),
            });
        }
        let session = body["value"]["sessionId"]
            .as_str()
            .or_else(|| body["sessionId"].as_str())
            .ok_or_else(|| DriverError::Backend {
                status: status.to_string(),
                message: "new session response lacks sessionId".into(),
            })?
            .to_string();
        Ok(Self {
            http,
            base,
            session,
            closed: false,
        })
    }

    async fn call(&self, method: Method, path: &str, body: Option<Value>, context: &str) -> Result<Value, DriverError> {
        if self.closed {
            return Err(DriverError::SessionClosed);
        }
        let url = format!("{}/session/{}{}", self.base, self.session, path);
        let mut req = self.http.request(method.clone(), &url);
        if method == Method::POST {
            req = req.json(&body.unwrap_or_else(|| json!({})));
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                DriverError::NavigationTimeout(context.to_string())
            } else {
                DriverError::Backend {
                    status: "transport".into(),
                    message: e.to_string(),
                }
            }
        })?;
        let status = resp.status().as_u16();
        let body: Value = resp.json().await.map_err(|e| DriverError::Backend {
            status: status.to_string(),
            message: format!("unreadable response: {e}"),
        })?;
        if status >= 400 {
            return Err(protocol_error(status, &body, context));
        }
        Ok(body.get("value").cloned().unwrap_or(Value::Null))
    }

    fn element_ids(v: &Value) -> Vec<String> {
        v.as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|e| e[ELEMENT_KEY].as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[async_trait]
impl Backend for WebDriverBackend {
    fn session_id(&self) -> &str {
        &self.session
    }

    async fn navigate(&mut self, url: &str) -> Result<(), DriverError> {
        self.call(Method::POST, "/url", Some(json!({ "url": url })), url).await?;
        Ok(())
    }

    async fn find(&mut self, selector: &Selector, scope: Option<&str>) -> Result<Vec<String>, DriverError> {
        let (using, value) = locator(selector);
        let path = match scope {
            Some(s) => format!("/element/{s}/elements"),
            None => "/elements".to_string(),
        };
        let found = self
            .call(
                Method::POST,
                &path,
                Some(json!({ "using": using, "value": value })),
                &selector.to_string(),
            )
            .await?;
        Ok(Self::element_ids(&found))
    }

    async fn describe(&mut self, handle: &str) -> Result<ElementInfo, DriverError> {
        let name = self.call(Method::GET, &format!("/element/{handle}/name"), None, handle).await?;
        let is_anchor = name.as_str().is_some_and(|n| n.eq_ignore_ascii_case("a"));
        let href = if is_anchor {
            self.call(Method::GET, &format!("/element/{handle}/property/href"), None, handle)
                .await?
                .as_str()
                .filter(|h| !h.is_empty())
                .map(str::to_string)
        } else {
            None
        };
        let disabled = self
            .call(Method::GET, &format!("/element/{handle}/attribute/disabled"), None, handle)
            .await?;
        let aria = self
            .call(Method::GET, &format!("/element/{handle}/attribute/aria-disabled"), None, handle)
            .await?;
        Ok(ElementInfo {
            is_anchor,
            href,
            disabled: !disabled.is_null() && disabled != Value::Bool(false) || aria.as_str() == Some("true"),
        })
    }

    async fn click(&mut self, handle: &str) -> Result<(), DriverError> {
        self.call(Method::POST, &format!("/element/{handle}/click"), None, handle).await?;
        Ok(())
    }

    async fn current_url(&mut self) -> Result<Option<String>, DriverError> {
        let v = self.call(Method::GET, "/url", None, "current url").await?;
        Ok(v.as_str()
            .filter(|u| !u.is_empty() && *u != "about:blank" && *u != "data:,")
            .map(str::to_string))
    }

    async fn back(&mut self) -> Result<(), DriverError> {
        self.call(Method::POST, "/back", None, "back").await?;
        Ok(())
    }

    async fn close(&mut self) -> Result<(), DriverError> {
        if self.closed {
            return Ok(());
        }
        let r = self.call(Method::DELETE, "", None, "delete session").await;
        self.closed = true;
        r.map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locators() {
        assert_eq!(locator(&Selector::id("next")), ("css selector", "[id=\"next\"]".to_string()));
        assert_eq!(
            locator(&Selector::class("btn  next-btn")),
            ("css selector", "[class~=\"btn\"][class~=\"next-btn\"]".to_string())
        );
        assert_eq!(locator(&Selector::xpath("//a")), ("xpath", "//a".to_string()));
        assert_eq!(locator(&Selector::id("a\"b")).1, "[id=\"a\\\"b\"]");
    }

    #[test]
    fn capabilities_route_through_proxy() {
        let cfg = DriverConfig {
            proxy_endpoint: Some("127.0.0.1:8899".into()),
            user_agent: "UA/1".into(),
            ..DriverConfig::default()
        };
        let caps = capabilities(&cfg);
        let m = &caps["capabilities"]["alwaysMatch"];
        assert_eq!(m["acceptInsecureCerts"], true);
        assert_eq!(m["proxy"]["sslProxy"], "127.0.0.1:8899");
        assert_eq!(m["timeouts"]["pageLoad"], 60_000);
        let args: Vec<&str> = m["goog:chromeOptions"]["args"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a.as_str().unwrap())
            .collect();
        assert!(args.contains(&"--user-agent=UA/1"));
        assert!(args.contains(&"--proxy-server=http://127.0.0.1:8899"));
    }

    #[test]
    fn protocol_errors_map_to_driver_errors() {
        let body = json!({"value": {"error": "no such element", "message": "m"}});
        assert!(matches!(protocol_error(404, &body, "x"), DriverError::ElementNotFound(_)));
        let body = json!({"value": {"error": "unknown error", "message": "boom"}});
        match protocol_error(500, &body, "x") {
            DriverError::Backend { status, message } => {
                assert_eq!(status, "500 unknown error");
                assert_eq!(message, "boom");
            }
            other => panic!("{other:?}"),
        }
    }
}
