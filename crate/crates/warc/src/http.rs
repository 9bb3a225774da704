//! Just enough HTTP/1.x parsing to look inside `application/http` blocks.

use std::borrow::Cow;

const MAX_HEADERS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpHead {
    /// Status code for responses.
    pub status: Option<u16>,
    /// Method for requests.
    pub method: Option<String>,
    /// Request target for requests.
    pub target: Option<String>,
    pub headers: Vec<(String, String)>,
    /// Offset of the first body byte within the parsed buffer.
    pub body_offset: usize,
}

impl HttpHead {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_chunked(&self) -> bool {
        self.header("transfer-encoding")
            .map(|v| v.to_ascii_lowercase().contains("chunked"))
            .unwrap_or(false)
    }

    /// Media type without parameters, lower-cased.
    pub fn mime(&self) -> Option<String> {
        self.header("content-type").map(|v| {
            v.split(';')
                .next()
                .unwrap_or_default()
                .trim()
                .to_ascii_lowercase()
        })
    }
}

fn collect_headers(headers: &[httparse::Header<'_>]) -> Vec<(String, String)> {
    headers
        .iter()
        .map(|h| {
            (
                h.name.to_string(),
                String::from_utf8_lossy(h.value).into_owned(),
            )
        })
        .collect()
}

pub fn parse_response_head(buf: &[u8]) -> Option<HttpHead> {
    let mut headers = vec![httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut resp = httparse::Response::new(&mut headers);
    match resp.parse(buf) {
        Ok(httparse::Status::Complete(n)) => Some(HttpHead {
            status: resp.code,
            method: None,
            target: None,
            headers: collect_headers(resp.headers),
            body_offset: n,
        }),
        _ => None,
    }
}

pub fn parse_request_head(buf: &[u8]) -> Option<HttpHead> {
    let mut headers = vec![httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut headers);
    match req.parse(buf) {
        Ok(httparse::Status::Complete(n)) => Some(HttpHead {
            status: None,
            method: req.method.map(str::to_string),
            target: req.path.map(str::to_string),
            headers: collect_headers(req.headers),
            body_offset: n,
        }),
        _ => None,
    }
}

/// Removes chunked transfer coding. Returns `None` when the framing is broken.
pub fn dechunk(mut body: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(body.len());
    loop {
        let line_end = body.windows(2).position(|w| w == b"\r\n")?;
        let size_line = std::str::from_utf8(&body[..line_end]).ok()?;
        let size_hex = size_line.split(';').next()?.trim();
        let size = usize::from_str_radix(size_hex, 16).ok()?;
        body = &body[line_end + 2..];
        if size == 0 {
            return Some(out);
        }
        if body.len() < size + 2 {
            return None;
        }
        out.extend_from_slice(&body[..size]);
        if &body[size..size + 2] != b"\r\n" {
            return None;
        }
        body = &body[size + 2..];
    }
}

/// The payload of an HTTP message: its body with transfer coding removed.
pub fn message_payload<'a>(head: &HttpHead, message: &'a [u8]) -> Option<Cow<'a, [u8]>> {
    let body = message.get(head.body_offset..)?;
    if head.is_chunked() {
        dechunk(body).map(Cow::Owned)
    } else {
        Some(Cow::Borrowed(body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_response_and_mime() {
        let msg = b"HTTP/1.1 404 Not Found\r\nContent-Type: Text/HTML; charset=utf-8\r\n\r\nnope";
        let head = parse_response_head(msg).unwrap();
        assert_eq!(head.status, Some(404));
        assert_eq!(head.mime().as_deref(), Some("text/html"));
        assert_eq!(&msg[head.body_offset..], b"nope");
    }

    #[test]
    fn dechunks() {
        let body = b"3\r\nabc\r\n2;ext=1\r\nde\r\n0\r\n\r\n";
        assert_eq!(dechunk(body).unwrap(), b"abcde");
        assert!(dechunk(b"5\r\nab").is_none());
    }

    #[test]
    fn incomplete_head_is_none() {
        assert!(parse_response_head(b"HTTP/1.1 200 OK\r\nA: b\r\n").is_none());
    }
}
