//! XPath 1.0 subset over [`Document`]: absolute and relative location
//! paths, `//`, `.`, `..`, name tests, `*`, `node()`, unions, and
//! predicates built from positions, `last()`, attribute tests,
//! `contains`, `starts-with`, `not`, `and` and `or`.

use super::script::Document;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Axis {
    Child,
    DescendantOrSelf,
    SelfAxis,
    Parent,
}

#[derive(Debug, Clone, PartialEq)]
enum NodeTest {
    Name(String),
    AnyElement,
    AnyNode,
}

#[derive(Debug, Clone, PartialEq)]
enum Pred {
    Position(usize),
    Last,
    HasAttr(String),
    AttrEq(String, String, bool),
    Contains(String, String),
    StartsWith(String, String),
    Not(Box<Pred>),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
}

#[derive(Debug, Clone, PartialEq)]
struct Step {
    axis: Axis,
    test: NodeTest,
    preds: Vec<Pred>,
}

#[derive(Debug, Clone, PartialEq)]
struct Path {
    absolute: bool,
    steps: Vec<Step>,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, what: &str) -> Result<T, String> {
        Err(format!("xpath {:?}: {what} at {}", self.src, self.pos))
    }

    fn ws(&mut self) {
        while self.s.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.ws();
        if self.s[self.pos..].starts_with(tok.as_bytes()) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), String> {
        if self.eat(tok) {
            Ok(())
        } else {
            self.err(&format!("expected {tok:?}"))
        }
    }

    fn name(&mut self) -> Result<String, String> {
        self.ws();
        let start = self.pos;
        while self
            .s
            .get(self.pos)
            .is_some_and(|&c| c.is_ascii_alphanumeric() || c == b'-' || c == b'_' || c == b':')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected name");
        }
        Ok(String::from_utf8_lossy(&self.s[start..self.pos]).into_owned())
    }

    fn literal(&mut self) -> Result<String, String> {
        self.ws();
        let Some(&q) = self.s.get(self.pos).filter(|&&c| c == b'\'' || c == b'"') else {
            return self.err("expected string literal");
        };
        self.pos += 1;
        let start = self.pos;
        while self.s.get(self.pos).is_some_and(|&c| c != q) {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return self.err("unterminated string");
        }
        let v = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(v)
    }

    fn union(&mut self) -> Result<Vec<Path>, String> {
        let mut paths = vec![self.path()?];
        while self.eat("|") {
            paths.push(self.path()?);
        }
        self.ws();
        if self.pos != self.s.len() {
            return self.err("trailing input");
        }
        Ok(paths)
    }

    fn path(&mut self) -> Result<Path, String> {
        self.ws();
        let mut steps = Vec::new();
        let absolute = if self.eat("//") {
            steps.push(desc_or_self());
            true
        } else {
            self.eat("/")
        };
        steps.push(self.step()?);
        loop {
            if self.eat("//") {
                steps.push(desc_or_self());
            } else if !self.eat("/") {
                break;
            }
            steps.push(self.step()?);
        }
        Ok(Path { absolute, steps })
    }

    fn step(&mut self) -> Result<Step, String> {
        if self.eat("..") {
            return Ok(Step {
                axis: Axis::Parent,
                test: NodeTest::AnyNode,
                preds: Vec::new(),
            });
        }
        if self.eat(".") {
            return Ok(Step {
                axis: Axis::SelfAxis,
                test: NodeTest::AnyNode,
                preds: Vec::new(),
            });
        }
        let test = if self.eat("*") {
            NodeTest::AnyElement
        } else if self.eat("node()") {
            NodeTest::AnyNode
        } else {
            NodeTest::Name(self.name()?.to_ascii_lowercase())
        };
        let mut preds = Vec::new();
        while self.eat("[") {
            preds.push(self.or_expr()?);
            self.expect("]")?;
        }
        Ok(Step {
            axis: Axis::Child,
            test,
            preds,
        })
    }

    fn or_expr(&mut self) -> Result<Pred, String> {
        let mut lhs = self.and_expr()?;
        while self.keyword("or") {
            lhs = Pred::Or(Box::new(lhs), Box::new(self.and_expr()?));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Pred, String> {
        let mut lhs = self.atom()?;
        while self.keyword("and") {
            lhs = Pred::And(Box::new(lhs), Box::new(self.atom()?));
        }
        Ok(lhs)
    }

    fn keyword(&mut self, kw: &str) -> bool {
        self.ws();
        let save = self.pos;
        if self.eat(kw) && self.s.get(self.pos).is_some_and(|c| c.is_ascii_whitespace() || *c == b'(' || *c == b'@') {
            return true;
        }
        self.pos = save;
        false
    }

    fn attr_ref(&mut self) -> Result<String, String> {
        self.expect("@")?;
        Ok(self.name()?.to_ascii_lowercase())
    }

    fn atom(&mut self) -> Result<Pred, String> {
        self.ws();
        if self.eat("(") {
            let p = self.or_expr()?;
            self.expect(")")?;
            return Ok(p);
        }
        if self.eat("last()") {
            return Ok(Pred::Last);
        }
        for (f, ctor) in [
            ("contains(", Pred::Contains as fn(String, String) -> Pred),
            ("starts-with(", Pred::StartsWith),
        ] {
            if self.eat(f) {
                let a = self.attr_ref()?;
                self.expect(",")?;
                let v = self.literal()?;
                self.expect(")")?;
                return Ok(ctor(a, v));
            }
        }
        if self.eat("not(") {
            let p = self.or_expr()?;
            self.expect(")")?;
            return Ok(Pred::Not(Box::new(p)));
        }
        if self.s.get(self.pos) == Some(&b'@') {
            let a = self.attr_ref()?;
            if self.eat("!=") {
                return Ok(Pred::AttrEq(a, self.literal()?, false));
            }
            if self.eat("=") {
                return Ok(Pred::AttrEq(a, self.literal()?, true));
            }
            return Ok(Pred::HasAttr(a));
        }
        let start = self.pos;
        while self.s.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start != self.pos {
            let n: usize = std::str::from_utf8(&self.s[start..self.pos])
                .ok()
                .and_then(|d| d.parse().ok())
                .unwrap_or(0);
            if n == 0 {
                return self.err("positions start at 1");
            }
            return Ok(Pred::Position(n));
        }
        self.err("unsupported predicate")
    }
}

fn desc_or_self() -> Step {
    Step {
        axis: Axis::DescendantOrSelf,
        test: NodeTest::AnyNode,
        preds: Vec::new(),
    }
}

fn test_ok(test: &NodeTest, doc: &Document, idx: usize) -> bool {
    match test {
        NodeTest::AnyNode => true,
        NodeTest::AnyElement => idx != 0,
        NodeTest::Name(n) => idx != 0 && doc.node(idx).is_some_and(|x| &x.tag == n),
    }
}

fn eval_pred(p: &Pred, doc: &Document, idx: usize, pos: usize, size: usize) -> bool {
    let attr = |a: &str| doc.node(idx).and_then(|n| n.attr(a).map(str::to_string));
    match p {
        Pred::Position(n) => pos == *n,
        Pred::Last => pos == size,
        Pred::HasAttr(a) => attr(a).is_some(),
        Pred::AttrEq(a, v, eq) => attr(a).is_some_and(|x| (&x == v) == *eq),
        Pred::Contains(a, v) => attr(a).is_some_and(|x| x.contains(v.as_str())),
        Pred::StartsWith(a, v) => attr(a).is_some_and(|x| x.starts_with(v.as_str())),
        Pred::Not(q) => !eval_pred(q, doc, idx, pos, size),
        Pred::And(l, r) => eval_pred(l, doc, idx, pos, size) && eval_pred(r, doc, idx, pos, size),
        Pred::Or(l, r) => eval_pred(l, doc, idx, pos, size) || eval_pred(r, doc, idx, pos, size),
    }
}

fn descendants_or_self(doc: &Document, idx: usize, out: &mut Vec<usize>) {
    out.push(idx);
    if let Some(n) = doc.node(idx) {
        for &c in &n.children {
            descendants_or_self(doc, c, out);
        }
    }
}

fn apply_step(step: &Step, doc: &Document, ctx: usize) -> Vec<usize> {
    let mut cands = match step.axis {
        Axis::Child => doc.node(ctx).map(|n| n.children.clone()).unwrap_or_default(),
        Axis::SelfAxis => vec![ctx],
        Axis::Parent => doc.node(ctx).and_then(|n| n.parent).into_iter().collect(),
        Axis::DescendantOrSelf => {
            let mut v = Vec::new();
            descendants_or_self(doc, ctx, &mut v);
            v
        }
    };
    cands.retain(|&i| test_ok(&step.test, doc, i));
    for p in &step.preds {
        let size = cands.len();
        cands = cands
            .iter()
            .enumerate()
            .filter(|&(k, &i)| eval_pred(p, doc, i, k + 1, size))
            .map(|(_, &i)| i)
            .collect();
    }
    cands
}

pub fn evaluate(expr: &str, doc: &Document, scope: Option<usize>) -> Result<Vec<usize>, String> {
    let mut p = Parser {
        s: expr.as_bytes(),
        pos: 0,
        src: expr,
    };
    let paths = p.union()?;
    let mut out = Vec::new();
    for path in &paths {
        let mut ctx = vec![if path.absolute { 0 } else { scope.unwrap_or(0) }];
        for step in &path.steps {
            let mut next: Vec<usize> = ctx.iter().flat_map(|&c| apply_step(step, doc, c)).collect();
            next.sort_unstable();
            next.dedup();
            ctx = next;
        }
        out.extend(ctx);
    }
    out.sort_unstable();
    out.dedup();
    out.retain(|&i| i != 0);
    Ok(out)
}
