use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::digest::{payload_digest, DigestPair};
use crate::http;
use crate::{Result, WarcError};

pub const WARC_VERSION: &str = "WARC/1.1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordType {
    Warcinfo,
    Request,
    Response,
    Metadata,
}

impl RecordType {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordType::Warcinfo => "warcinfo",
            RecordType::Request => "request",
            RecordType::Response => "response",
            RecordType::Metadata => "metadata",
        }
    }

    fn default_content_type(self) -> &'static str {
        match self {
            RecordType::Warcinfo | RecordType::Metadata => "application/warc-fields",
            RecordType::Request => "application/http; msgtype=request",
            RecordType::Response => "application/http; msgtype=response",
        }
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordType {
    type Err = WarcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warcinfo" => Ok(RecordType::Warcinfo),
            "request" => Ok(RecordType::Request),
            "response" => Ok(RecordType::Response),
            "metadata" => Ok(RecordType::Metadata),
            other => Err(WarcError::InvalidRecord(format!(
                "unsupported WARC-Type {other:?}"
            ))),
        }
    }
}

/// `urn:uuid:` record identifier wrapped in angle brackets, as it appears in headers.
pub fn new_record_id() -> String {
    format!("<urn:uuid:{}>", uuid::Uuid::new_v4())
}

/// WARC-Date rendering: UTC, second precision.
pub fn warc_date(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// One WARC record. Header order is kept as written so that a record read
/// back from disk re-serializes to the same bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarcRecord {
    pub(crate) version: String,
    pub(crate) headers: Vec<(String, String)>,
    pub(crate) block: Vec<u8>,
}

impl WarcRecord {
    pub fn builder(record_type: RecordType) -> RecordBuilder {
        RecordBuilder::new(record_type)
    }

    pub(crate) fn from_parts(version: String, headers: Vec<(String, String)>, block: Vec<u8>) -> Self {
        Self {
            version,
            headers,
            block,
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn headers(&self) -> &[(String, String)] {
        &self.headers
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Replaces the first header named `name`, or appends it.
    pub fn set_header(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self
            .headers
            .iter_mut()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
        {
            Some(slot) => slot.1 = value,
            None => self.headers.push((name.to_string(), value)),
        }
    }

    pub fn record_type(&self) -> Option<RecordType> {
        self.header("WARC-Type").and_then(|t| t.parse().ok())
    }

    pub fn record_id(&self) -> Option<&str> {
        self.header("WARC-Record-ID")
    }

    pub fn target_uri(&self) -> Option<&str> {
        self.header("WARC-Target-URI")
    }

    pub fn date(&self) -> Option<DateTime<Utc>> {
        self.header("WARC-Date")
            .and_then(|d| DateTime::parse_from_rfc3339(d).ok())
            .map(|d| d.with_timezone(&Utc))
    }

    pub fn content_type(&self) -> Option<&str> {
        self.header("Content-Type")
    }

    pub fn concurrent_to(&self) -> Option<&str> {
        self.header("WARC-Concurrent-To")
    }

    pub fn block(&self) -> &[u8] {
        &self.block
    }

    pub fn block_digest(&self) -> Option<&str> {
        self.header("WARC-Block-Digest")
    }

    pub fn payload_digest(&self) -> Option<&str> {
        self.header("WARC-Payload-Digest")
    }

    pub fn content_length(&self) -> Option<u64> {
        self.header("Content-Length").and_then(|v| v.trim().parse().ok())
    }

    /// Parsed HTTP head of a request/response block.
    pub fn http_head(&self) -> Option<http::HttpHead> {
        match self.record_type()? {
            RecordType::Response => http::parse_response_head(&self.block),
            RecordType::Request => http::parse_request_head(&self.block),
            _ => None,
        }
    }

    /// Status code of a response record's HTTP message.
    pub fn http_status(&self) -> Option<u16> {
        if self.record_type()? != RecordType::Response {
            return None;
        }
        http::parse_response_head(&self.block)?.status
    }

    /// Checks the record invariants: mandatory headers, exact Content-Length
    /// and a matching block digest.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(WarcError::InvalidRecord(m));
        let Some(rt) = self.record_type() else {
            return invalid("missing or unknown WARC-Type".into());
        };
        match self.record_id() {
            Some(id) if id.starts_with("<urn:") && id.ends_with('>') => {}
            Some(id) => return invalid(format!("malformed WARC-Record-ID {id}")),
            None => return invalid("missing WARC-Record-ID".into()),
        }
        if self.date().is_none() {
            return invalid("missing or malformed WARC-Date".into());
        }
        if rt != RecordType::Warcinfo && self.target_uri().is_none() {
            return invalid(format!("{rt} record without WARC-Target-URI"));
        }
        match self.content_length() {
            Some(n) if n == self.block.len() as u64 => {}
            Some(n) => {
                return invalid(format!(
                    "Content-Length {n} does not match block length {}",
                    self.block.len()
                ))
            }
            None => return invalid("missing Content-Length".into()),
        }
        if let Some(d) = self.block_digest() {
            let actual = payload_digest(&self.block);
            if d != actual {
                return invalid(format!("block digest {d} does not match {actual}"));
            }
        }
        Ok(())
    }

    /// Header block without the record body: version line, fields, blank line.
    pub fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 * (self.headers.len() + 1));
        out.extend_from_slice(self.version.as_bytes());
        out.extend_from_slice(b"\r\n");
        for (n, v) in &self.headers {
            out.extend_from_slice(n.as_bytes());
            out.extend_from_slice(b": ");
            out.extend_from_slice(v.as_bytes());
            out.extend_from_slice(b"\r\n");
        }
        out.extend_from_slice(b"\r\n");
        out
    }

    /// Full on-disk (uncompressed) serialization.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        out.extend_from_slice(&self.block);
        out.extend_from_slice(b"\r\n\r\n");
        out
    }
}

/// Digests for an HTTP exchange block. The payload digest is present only when
/// the block parses as an HTTP message.
pub(crate) fn digests_for(record_type: RecordType, block: &[u8]) -> DigestPair {
    let head = match record_type {
        RecordType::Response => http::parse_response_head(block),
        RecordType::Request => http::parse_request_head(block),
        _ => None,
    };
    let payload = head
        .as_ref()
        .and_then(|h| http::message_payload(h, block))
        .map(|p| payload_digest(&p));
    DigestPair {
        block: payload_digest(block),
        payload,
    }
}

/// Builds records with computed digests and Content-Length, headers in a
/// fixed order.
#[derive(Debug, Clone)]
pub struct RecordBuilder {
    record_type: RecordType,
    record_id: Option<String>,
    date: Option<DateTime<Utc>>,
    target_uri: Option<String>,
    concurrent_to: Option<String>,
    content_type: Option<String>,
    extra: Vec<(String, String)>,
    block: Vec<u8>,
    payload_digest: Option<String>,
}

impl RecordBuilder {
    pub fn new(record_type: RecordType) -> Self {
        Self {
            record_type,
            record_id: None,
            date: None,
            target_uri: None,
            concurrent_to: None,
            content_type: None,
            extra: Vec::new(),
            block: Vec::new(),
            payload_digest: None,
        }
    }

    pub fn record_id(mut self, id: impl Into<String>) -> Self {
        self.record_id = Some(id.into());
        self
    }

    pub fn date(mut self, date: DateTime<Utc>) -> Self {
        self.date = Some(date);
        self
    }

    pub fn target_uri(mut self, uri: impl Into<String>) -> Self {
        self.target_uri = Some(uri.into());
        self
    }

    pub fn concurrent_to(mut self, id: impl Into<String>) -> Self {
        self.concurrent_to = Some(id.into());
        self
    }

    pub fn content_type(mut self, ct: impl Into<String>) -> Self {
        self.content_type = Some(ct.into());
        self
    }

    /// Extra named field, written after the standard ones.
    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.extra.push((name.into(), value.into()));
        self
    }

    pub fn block(mut self, block: impl Into<Vec<u8>>) -> Self {
        self.block = block.into();
        self
    }

    /// Overrides the payload digest; used when the payload was hashed while streaming.
    pub fn payload_digest(mut self, digest: impl Into<String>) -> Self {
        self.payload_digest = Some(digest.into());
        self
    }

    fn headers(&self, block_len: u64, digests: &DigestPair) -> Vec<(String, String)> {
        let mut h = Vec::with_capacity(10 + self.extra.len());
        h.push(("WARC-Type".to_string(), self.record_type.to_string()));
        h.push((
            "WARC-Record-ID".to_string(),
            self.record_id.clone().unwrap_or_else(new_record_id),
        ));
        h.push((
            "WARC-Date".to_string(),
            warc_date(self.date.unwrap_or_else(Utc::now)),
        ));
        if let Some(t) = &self.target_uri {
            h.push(("WARC-Target-URI".to_string(), t.clone()));
        }
        if let Some(c) = &self.concurrent_to {
            h.push(("WARC-Concurrent-To".to_string(), c.clone()));
        }
        h.extend(self.extra.iter().cloned());
        h.push((
            "Content-Type".to_string(),
            self.content_type
                .clone()
                .unwrap_or_else(|| self.record_type.default_content_type().to_string()),
        ));
        h.push(("WARC-Block-Digest".to_string(), digests.block.clone()));
        if let Some(p) = &digests.payload {
            h.push(("WARC-Payload-Digest".to_string(), p.clone()));
        }
        h.push(("Content-Length".to_string(), block_len.to_string()));
        h
    }

    pub fn build(self) -> WarcRecord {
        let mut digests = digests_for(self.record_type, &self.block);
        if let Some(p) = &self.payload_digest {
            digests.payload = Some(p.clone());
        }
        let headers = self.headers(self.block.len() as u64, &digests);
        WarcRecord {
            version: WARC_VERSION.to_string(),
            headers,
            block: self.block,
        }
    }

    /// Header-only record for a block that will be streamed by
    /// [`crate::WarcWriter::write_streamed`].
    pub fn build_streamed(self, block_len: u64, digests: DigestPair) -> WarcRecord {
        let headers = self.headers(block_len, &digests);
        WarcRecord {
            version: WARC_VERSION.to_string(),
            headers,
            block: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_fills_length_and_digests() {
        let r = WarcRecord::builder(RecordType::Response)
            .target_uri("http://example.com/")
            .block(&b"HTTP/1.1 200 OK\r\nContent-Length: 3\r\n\r\nabc"[..])
            .build();
        r.validate().unwrap();
        assert_eq!(r.content_length(), Some(r.block().len() as u64));
        assert_eq!(
            r.payload_digest(),
            Some("sha1:VGMT4NSHA2AWVOR6EVYXQUGCNSONBWE5")
        );
        assert_eq!(r.http_status(), Some(200));
    }

    #[test]
    fn chunked_payload_digest_ignores_framing() {
        let r = WarcRecord::builder(RecordType::Response)
            .target_uri("http://example.com/")
            .block(&b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n1\r\na\r\n2\r\nbc\r\n0\r\n\r\n"[..])
            .build();
        assert_eq!(
            r.payload_digest(),
            Some("sha1:VGMT4NSHA2AWVOR6EVYXQUGCNSONBWE5")
        );
    }

    #[test]
    fn content_length_mismatch_is_invalid() {
        let mut r = WarcRecord::builder(RecordType::Response)
            .target_uri("http://example.com/")
            .block(&b"HTTP/1.1 200 OK\r\n\r\n"[..])
            .build();
        r.set_header("Content-Length", "99");
        assert!(matches!(r.validate(), Err(WarcError::InvalidRecord(_))));
    }

    #[test]
    fn warcinfo_needs_no_target() {
        let r = WarcRecord::builder(RecordType::Warcinfo)
            .block(&b"software: x\r\n"[..])
            .build();
        r.validate().unwrap();
        assert!(r.payload_digest().is_none());
        let resp = WarcRecord::builder(RecordType::Response).build();
        assert!(resp.validate().is_err());
    }
}
