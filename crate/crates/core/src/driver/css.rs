//! CSS selector subset: type, universal, `#id`, `.class`, attribute
//! selectors (`[a]`, `=`, `~=`, `^=`, `$=`, `*=`), `:first-child`,
//! `:last-child`, `:nth-child(n)`, descendant and child combinators, and
//! comma-separated lists.

use super::script::Document;

#[derive(Debug, Clone, PartialEq)]
enum AttrOp {
    Exists,
    Equals(String),
    Includes(String),
    Prefix(String),
    Suffix(String),
    Substring(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Pseudo {
    FirstChild,
    LastChild,
    NthChild(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Compound {
    tag: Option<String>,
    ids: Vec<String>,
    classes: Vec<String>,
    attrs: Vec<(String, AttrOp)>,
    pseudos: Vec<Pseudo>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Combinator {
    Descendant,
    Child,
}

/// Compounds right to left are matched against the element and its
/// ancestors; `parts[k].0` links compound k to compound k-1.
#[derive(Debug, Clone, PartialEq)]
struct Complex {
    parts: Vec<(Combinator, Compound)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CssSelector(Vec<Complex>);

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

fn is_ident(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '_'
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn err<T>(&self, what: &str) -> Result<T, String> {
        Err(format!("css selector {:?}: {what} at {}", self.src, self.pos))
    }

    fn skip_ws(&mut self) -> bool {
        let start = self.pos;
        while self.peek().map(char::is_whitespace).unwrap_or(false) {
            self.pos += 1;
        }
        self.pos > start
    }

    fn ident(&mut self) -> Result<String, String> {
        let start = self.pos;
        while self.peek().map(is_ident).unwrap_or(false) {
            self.pos += 1;
        }
        if self.pos == start {
            return self.err("expected identifier");
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn value(&mut self) -> Result<String, String> {
        match self.peek() {
            Some(q @ ('"' | '\'')) => {
                self.pos += 1;
                let start = self.pos;
                while self.peek().is_some_and(|c| c != q) {
                    self.pos += 1;
                }
                if self.peek() != Some(q) {
                    return self.err("unterminated string");
                }
                let v = self.chars[start..self.pos].iter().collect();
                self.pos += 1;
                Ok(v)
            }
            _ => self.ident(),
        }
    }

    fn attr(&mut self) -> Result<(String, AttrOp), String> {
        self.skip_ws();
        let name = self.ident()?.to_ascii_lowercase();
        self.skip_ws();
        let op = match self.peek() {
            Some(']') => {
                self.pos += 1;
                return Ok((name, AttrOp::Exists));
            }
            Some('=') => {
                self.pos += 1;
                '='
            }
            Some(c @ ('~' | '^' | '$' | '*')) if self.chars.get(self.pos + 1) == Some(&'=') => {
                self.pos += 2;
                c
            }
            _ => return self.err("expected attribute operator"),
        };
        self.skip_ws();
        let v = self.value()?;
        self.skip_ws();
        if self.peek() != Some(']') {
            return self.err("expected ]");
        }
        self.pos += 1;
        let op = match op {
            '=' => AttrOp::Equals(v),
            '~' => AttrOp::Includes(v),
            '^' => AttrOp::Prefix(v),
            '$' => AttrOp::Suffix(v),
            _ => AttrOp::Substring(v),
        };
        Ok((name, op))
    }

    fn compound(&mut self) -> Result<Compound, String> {
        let mut c = Compound::default();
        let mut any = false;
        match self.peek() {
            Some('*') => {
                self.pos += 1;
                any = true;
            }
            Some(ch) if is_ident(ch) => {
                c.tag = Some(self.ident()?.to_ascii_lowercase());
                any = true;
            }
            _ => {}
        }
        loop {
            match self.peek() {
                Some('#') => {
                    self.pos += 1;
                    c.ids.push(self.ident()?);
                }
                Some('.') => {
                    self.pos += 1;
                    c.classes.push(self.ident()?);
                }
                Some('[') => {
                    self.pos += 1;
                    c.attrs.push(self.attr()?);
                }
                Some(':') => {
                    self.pos += 1;
                    let name = self.ident()?;
                    let p = match name.as_str() {
                        "first-child" => Pseudo::FirstChild,
                        "last-child" => Pseudo::LastChild,
                        "nth-child" => {
                            if self.peek() != Some('(') {
                                return self.err("expected (");
                            }
                            self.pos += 1;
                            let n = self.ident()?;
                            if self.peek() != Some(')') {
                                return self.err("expected )");
                            }
                            self.pos += 1;
                            match n.parse() {
                                Ok(n) if n > 0 => Pseudo::NthChild(n),
                                _ => return self.err("unsupported nth-child argument"),
                            }
                        }
                        _ => return self.err("unsupported pseudo-class"),
                    };
                    c.pseudos.push(p);
                }
                _ => break,
            }
            any = true;
        }
        if !any {
            return self.err("expected selector");
        }
        Ok(c)
    }

    fn complex(&mut self) -> Result<Complex, String> {
        self.skip_ws();
        let mut parts = vec![(Combinator::Descendant, self.compound()?)];
        loop {
            let ws = self.skip_ws();
            match self.peek() {
                None | Some(',') => break,
                Some('>') => {
                    self.pos += 1;
                    self.skip_ws();
                    parts.push((Combinator::Child, self.compound()?));
                }
                Some(_) if ws => parts.push((Combinator::Descendant, self.compound()?)),
                Some(_) => return self.err("unexpected character"),
            }
        }
        Ok(Complex { parts })
    }
}

pub fn parse(src: &str) -> Result<CssSelector, String> {
    let mut p = Parser {
        chars: src.chars().collect(),
        pos: 0,
        src,
    };
    let mut list = vec![p.complex()?];
    while p.peek() == Some(',') {
        p.pos += 1;
        list.push(p.complex()?);
    }
    p.skip_ws();
    if p.pos != p.chars.len() {
        return p.err("trailing input");
    }
    Ok(CssSelector(list))
}

fn compound_matches(c: &Compound, doc: &Document, idx: usize) -> bool {
    let Some(node) = doc.node(idx) else {
        return false;
    };
    if node.parent.is_none() {
        return false;
    }
    if let Some(t) = &c.tag {
        if &node.tag != t {
            return false;
        }
    }
    if !c.ids.iter().all(|id| node.attr("id") == Some(id.as_str())) {
        return false;
    }
    if !c.classes.iter().all(|cl| node.has_class(cl)) {
        return false;
    }
    let attrs_ok = c.attrs.iter().all(|(name, op)| {
        let Some(v) = node.attr(name) else {
            return false;
        };
        match op {
            AttrOp::Exists => true,
            AttrOp::Equals(x) => v == x,
            AttrOp::Includes(x) => v.split_whitespace().any(|w| w == x),
            AttrOp::Prefix(x) => !x.is_empty() && v.starts_with(x.as_str()),
            AttrOp::Suffix(x) => !x.is_empty() && v.ends_with(x.as_str()),
            AttrOp::Substring(x) => !x.is_empty() && v.contains(x.as_str()),
        }
    });
    if !attrs_ok {
        return false;
    }
    let siblings = node
        .parent
        .and_then(|p| doc.node(p))
        .map(|p| p.children.as_slice())
        .unwrap_or_default();
    let pos = siblings.iter().position(|&s| s == idx);
    c.pseudos.iter().all(|p| match p {
        Pseudo::FirstChild => pos == Some(0),
        Pseudo::LastChild => pos == Some(siblings.len().saturating_sub(1)),
        Pseudo::NthChild(n) => pos == Some(n - 1),
    })
}

fn match_from(cx: &Complex, k: usize, doc: &Document, idx: usize) -> bool {
    if !compound_matches(&cx.parts[k].1, doc, idx) {
        return false;
    }
    if k == 0 {
        return true;
    }
    let mut anc = doc.node(idx).and_then(|n| n.parent);
    match cx.parts[k].0 {
        Combinator::Child => anc.is_some_and(|p| match_from(cx, k - 1, doc, p)),
        Combinator::Descendant => {
            while let Some(p) = anc {
                if match_from(cx, k - 1, doc, p) {
                    return true;
                }
                anc = doc.node(p).and_then(|n| n.parent);
            }
            false
        }
    }
}

pub fn matches(sel: &CssSelector, doc: &Document, idx: usize) -> bool {
    sel.0
        .iter()
        .any(|cx| match_from(cx, cx.parts.len() - 1, doc, idx))
}
