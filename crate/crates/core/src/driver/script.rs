//! PageScript: a declarative fake site for the mock backend, and the
//! flattened [`Document`] the selector engines run against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::trace::{Selector, SelectorStrategy};

use super::{css, xpath};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageScript {
    /// Pages keyed by absolute URL (fragment ignored).
    pub pages: BTreeMap<String, ScriptPage>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptPage {
    /// Sub-resources fetched whenever the page loads (stylesheets, images).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resources: Vec<String>,
    /// Top-level elements in document order. They are placed under a
    /// synthesized `html > body` unless the first one is itself `html`.
    #[serde(default)]
    pub elements: Vec<ScriptElement>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptElement {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub href: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub disabled: bool,
    /// Anchor that downloads instead of navigating.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub download: bool,
    /// Any further attributes (e.g. `aria-disabled`, `data-*`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
    /// Click behavior; anchors without one follow their href.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_click: Option<Transition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ScriptElement>,
}

impl ScriptElement {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
            ..Self::default()
        }
    }

    pub fn id(mut self, id: &str) -> Self {
        self.id = Some(id.to_string());
        self
    }

    pub fn class(mut self, class: &str) -> Self {
        self.classes.push(class.to_string());
        self
    }

    pub fn href(mut self, href: &str) -> Self {
        self.href = Some(href.to_string());
        self
    }

    pub fn disabled(mut self, disabled: bool) -> Self {
        self.disabled = disabled;
        self
    }

    pub fn download(mut self) -> Self {
        self.download = true;
        self
    }

    pub fn attr(mut self, name: &str, value: &str) -> Self {
        self.attrs.insert(name.to_string(), value.to_string());
        self
    }

    pub fn on_click(mut self, t: Transition) -> Self {
        self.on_click = Some(t);
        self
    }

    pub fn child(mut self, c: ScriptElement) -> Self {
        self.children.push(c);
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionMode {
    /// Full page load of `navigate`.
    #[default]
    Load,
    /// In-page update: the URL changes to `navigate` without fetching it.
    PushState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub navigate: Option<String>,
    #[serde(default)]
    pub mode: TransitionMode,
    /// Resources requested by the click (XHR, downloads).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fetch: Vec<String>,
}

impl PageScript {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn page(&self, url: &str) -> Option<&ScriptPage> {
        let key = strip_fragment(url);
        self.pages
            .get(&key)
            .or_else(|| self.pages.iter().find(|(k, _)| strip_fragment(k) == key).map(|(_, p)| p))
    }

    /// Every URL referenced by a transition or href that is neither a
    /// defined page nor an absolute URL. Such references cannot be followed.
    pub fn dangling_references(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (url, page) in &self.pages {
            let base = Url::parse(url).ok();
            let mut stack: Vec<&ScriptElement> = page.elements.iter().collect();
            while let Some(e) = stack.pop() {
                let targets = e
                    .href
                    .iter()
                    .chain(e.on_click.iter().flat_map(|t| t.navigate.iter().chain(t.fetch.iter())));
                for t in targets {
                    let resolved = base.as_ref().and_then(|b| b.join(t).ok());
                    if resolved.is_none() {
                        out.push(t.clone());
                    }
                }
                stack.extend(e.children.iter());
            }
        }
        out
    }
}

pub(crate) fn strip_fragment(url: &str) -> String {
    match Url::parse(url) {
        Ok(mut u) => {
            u.set_fragment(None);
            u.into()
        }
        Err(_) => url.split('#').next().unwrap_or(url).to_string(),
    }
}

/// Flattened element tree in document (pre-)order. Node 0 is the document
/// root; it has no tag and never matches a selector.
#[derive(Debug, Clone)]
pub struct Document {
    pub(crate) nodes: Vec<Node>,
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub tag: String,
    pub attrs: BTreeMap<String, String>,
    pub source: Option<ScriptElement>,
}

impl Node {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).map(String::as_str)
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.attr("class")
            .map(|c| c.split_whitespace().any(|x| x == class))
            .unwrap_or(false)
    }
}

impl Document {
    pub fn empty() -> Self {
        let mut d = Document { nodes: Vec::new() };
        d.nodes.push(Node {
            parent: None,
            children: Vec::new(),
            tag: String::new(),
            attrs: BTreeMap::new(),
            source: None,
        });
        d
    }

    pub fn from_page(page: &ScriptPage) -> Self {
        let mut d = Self::empty();
        let wrapped = page.elements.first().map(|e| e.tag == "html").unwrap_or(false);
        if wrapped {
            for e in &page.elements {
                d.push(0, e);
            }
        } else {
            let html = d.push_bare(0, "html");
            let body = d.push_bare(html, "body");
            for e in &page.elements {
                d.push(body, e);
            }
        }
        d
    }

    fn push_bare(&mut self, parent: usize, tag: &str) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            parent: Some(parent),
            children: Vec::new(),
            tag: tag.to_string(),
            attrs: BTreeMap::new(),
            source: None,
        });
        self.nodes[parent].children.push(idx);
        idx
    }

    fn push(&mut self, parent: usize, e: &ScriptElement) -> usize {
        let idx = self.push_bare(parent, &e.tag.to_ascii_lowercase());
        let mut attrs = e.attrs.clone();
        if let Some(id) = &e.id {
            attrs.insert("id".into(), id.clone());
        }
        if !e.classes.is_empty() {
            attrs.insert("class".into(), e.classes.join(" "));
        }
        if let Some(h) = &e.href {
            attrs.insert("href".into(), h.clone());
        }
        if e.disabled {
            attrs.insert("disabled".into(), String::new());
        }
        if e.download {
            attrs.insert("download".into(), String::new());
        }
        self.nodes[idx].attrs = attrs;
        let mut shallow = e.clone();
        shallow.children.clear();
        self.nodes[idx].source = Some(shallow);
        for c in &e.children {
            self.push(idx, c);
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub(crate) fn node(&self, idx: usize) -> Option<&Node> {
        self.nodes.get(idx)
    }

    pub(crate) fn element(&self, idx: usize) -> Option<&ScriptElement> {
        self.nodes.get(idx).and_then(|n| n.source.as_ref())
    }

    pub(crate) fn is_descendant(&self, node: usize, ancestor: usize) -> bool {
        let mut cur = self.nodes.get(node).and_then(|n| n.parent);
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.nodes[p].parent;
        }
        false
    }

    /// Element nodes in document order, optionally restricted to the
    /// descendants of `scope`.
    pub(crate) fn elements_in(&self, scope: Option<usize>) -> impl Iterator<Item = usize> + '_ {
        (1..self.nodes.len()).filter(move |&i| match scope {
            Some(s) => self.is_descendant(i, s),
            None => true,
        })
    }

    /// Resolves `selector`, returning node indices in document order.
    pub fn select(&self, selector: &Selector, scope: Option<usize>) -> Result<Vec<usize>, String> {
        match selector.strategy {
            SelectorStrategy::ElementId => Ok(self
                .elements_in(scope)
                .filter(|&i| self.nodes[i].attr("id") == Some(selector.value.as_str()))
                .collect()),
            SelectorStrategy::HtmlClass => {
                let wanted: Vec<&str> = selector.value.split_whitespace().collect();
                if wanted.is_empty() {
                    return Ok(Vec::new());
                }
                Ok(self
                    .elements_in(scope)
                    .filter(|&i| wanted.iter().all(|c| self.nodes[i].has_class(c)))
                    .collect())
            }
            SelectorStrategy::Css => {
                let sel = css::parse(&selector.value)?;
                Ok(self
                    .elements_in(scope)
                    .filter(|&i| css::matches(&sel, self, i))
                    .collect())
            }
            SelectorStrategy::Xpath => xpath::evaluate(&selector.value, self, scope),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> Document {
        let page = ScriptPage {
            resources: vec![],
            elements: vec![
                ScriptElement::new("div").id("main").class("box").child(
                    ScriptElement::new("ul")
                        .id("files")
                        .child(ScriptElement::new("li").child(ScriptElement::new("a").class("file").href("/f/1")))
                        .child(ScriptElement::new("li").child(ScriptElement::new("a").class("file").href("/f/2"))),
                ),
                ScriptElement::new("button").id("next").class("btn").class("next-btn").disabled(true),
            ],
        };
        Document::from_page(&page)
    }

    #[test]
    fn id_and_class_strategies() {
        let d = sample();
        assert_eq!(d.select(&Selector::id("next"), None).unwrap().len(), 1);
        assert_eq!(d.select(&Selector::class("file"), None).unwrap().len(), 2);
        assert_eq!(d.select(&Selector::class("btn next-btn"), None).unwrap().len(), 1);
        assert!(d.select(&Selector::id("nope"), None).unwrap().is_empty());
    }

    #[test]
    fn scoped_selection() {
        let d = sample();
        let ul = d.select(&Selector::id("files"), None).unwrap()[0];
        assert_eq!(d.select(&Selector::css("a"), Some(ul)).unwrap().len(), 2);
        let btn = d.select(&Selector::id("next"), None).unwrap()[0];
        assert!(d.select(&Selector::css("a"), Some(btn)).unwrap().is_empty());
    }

    #[test]
    fn synthesized_html_body() {
        let d = sample();
        assert_eq!(d.select(&Selector::xpath("/html/body/button"), None).unwrap().len(), 1);
    }
}
