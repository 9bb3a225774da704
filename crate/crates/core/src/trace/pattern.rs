use std::fmt;

use thiserror::Error;
use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid or relative url {0:?}")]
pub struct InvalidUrl(pub String);

/// Glob over absolute URLs. `*` matches any run of characters except `/`,
/// `**` matches any run including `/`. Scheme and host compare
/// case-insensitively, everything after them case-sensitively.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UrlPattern(String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Char(char),
    Star,
    DoubleStar,
}

impl UrlPattern {
    pub fn new(pattern: impl Into<String>) -> Self {
        Self(pattern.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Number of characters before the first wildcard; the specificity measure
    /// used to rank competing patterns.
    pub fn literal_prefix_len(&self) -> usize {
        self.0.chars().take_while(|c| *c != '*').count()
    }

    pub fn has_http_scheme(&self) -> bool {
        let lower = self.0.to_ascii_lowercase();
        lower.starts_with("http://") || lower.starts_with("https://")
    }

    /// Pattern with scheme and authority lower-cased and an empty path
    /// written as `/`, mirroring how URLs are serialized before matching.
    fn normalized(&self) -> String {
        let Some((scheme, rest)) = self.0.split_once("://") else {
            return self.0.clone();
        };
        let split = rest.find(['/', '?']).unwrap_or(rest.len());
        let (authority, tail) = rest.split_at(split);
        let tail = if tail.is_empty() || tail.starts_with('?') {
            format!("/{tail}")
        } else {
            tail.to_string()
        };
        format!(
            "{}://{}{}",
            scheme.to_ascii_lowercase(),
            authority.to_ascii_lowercase(),
            tail
        )
    }

    fn tokens(&self) -> Vec<Token> {
        let norm = self.normalized();
        let mut out = Vec::with_capacity(norm.len());
        let mut chars = norm.chars().peekable();
        while let Some(c) = chars.next() {
            if c == '*' {
                if chars.peek() == Some(&'*') {
                    chars.next();
                    // Collapse runs like `***` into one `**`.
                    while chars.peek() == Some(&'*') {
                        chars.next();
                    }
                    out.push(Token::DoubleStar);
                } else {
                    out.push(Token::Star);
                }
            } else {
                out.push(Token::Char(c));
            }
        }
        out
    }

    pub fn matches(&self, url: &str) -> Result<bool, InvalidUrl> {
        let subject = canonical_url(url)?;
        Ok(glob_match(&self.tokens(), &subject.chars().collect::<Vec<_>>()))
    }
}

impl fmt::Display for UrlPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses an absolute URL and drops its fragment.
pub(crate) fn canonical_url(url: &str) -> Result<String, InvalidUrl> {
    let mut parsed = Url::parse(url).map_err(|_| InvalidUrl(url.to_string()))?;
    if parsed.cannot_be_a_base() || parsed.host_str().is_none() {
        return Err(InvalidUrl(url.to_string()));
    }
    parsed.set_fragment(None);
    Ok(parsed.into())
}

fn glob_match(pattern: &[Token], text: &[char]) -> bool {
    // reachable[j]: pattern prefix consumed so far can end at text position j.
    let mut reachable = vec![false; text.len() + 1];
    reachable[0] = true;
    for tok in pattern {
        let mut next = vec![false; text.len() + 1];
        match tok {
            Token::Char(c) => {
                for j in 0..text.len() {
                    if reachable[j] && text[j] == *c {
                        next[j + 1] = true;
                    }
                }
            }
            Token::Star => {
                for j in 0..=text.len() {
                    if reachable[j] {
                        next[j] = true;
                        let mut k = j;
                        while k < text.len() && text[k] != '/' {
                            k += 1;
                            next[k] = true;
                        }
                    }
                }
            }
            Token::DoubleStar => {
                if let Some(first) = reachable.iter().position(|r| *r) {
                    next[first..].iter_mut().for_each(|n| *n = true);
                }
            }
        }
        reachable = next;
        if !reachable.iter().any(|r| *r) {
            return false;
        }
    }
    reachable[text.len()]
}

/// True iff `url` (fragment removed) matches `pattern`.
pub fn match_url(pattern: &UrlPattern, url: &str) -> Result<bool, InvalidUrl> {
    pattern.matches(url)
}
