use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use url::{Host, Url};

use crate::reader::{read_record_at, read_records};
use crate::record::RecordType;
use crate::{Result, WarcError};

/// Sort-friendly URI key: host labels reversed and comma-joined, then `)`,
/// then the path and sorted query, all lower-cased. `www.` is dropped and
/// default ports are omitted.
///
/// `http://www.Example.com/A?b=2&a=1` → `com,example)/a?a=1&b=2`
pub fn surt(uri: &str) -> String {
    let Ok(url) = Url::parse(uri) else {
        return uri.to_ascii_lowercase();
    };
    let host = url.host_str().unwrap_or_default().to_ascii_lowercase();
    let host_key = match url.host() {
        Some(Host::Domain(_)) => {
            let trimmed = strip_www(&host);
            trimmed.split('.').rev().collect::<Vec<_>>().join(",")
        }
        _ => host,
    };
    let mut key = host_key;
    if let Some(port) = url.port() {
        key.push(':');
        key.push_str(&port.to_string());
    }
    key.push(')');
    key.push_str(&url.path().to_ascii_lowercase());
    if let Some(q) = url.query().filter(|q| !q.is_empty()) {
        let mut parts: Vec<String> = q.split('&').map(|p| p.to_ascii_lowercase()).collect();
        parts.sort();
        key.push('?');
        key.push_str(&parts.join("&"));
    }
    key
}

fn strip_www(host: &str) -> &str {
    if let Some(rest) = host.strip_prefix("www") {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if let Some(tail) = rest[digits..].strip_prefix('.') {
            if tail.contains('.') {
                return tail;
            }
        }
    }
    host
}

/// One CDXJ index line: `<urlkey> <timestamp> <json>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdxjLine {
    #[serde(skip)]
    pub urlkey: String,
    #[serde(skip)]
    pub timestamp: String,
    pub url: String,
    pub mime: String,
    pub status: String,
    pub digest: String,
    pub length: String,
    pub offset: String,
    pub filename: String,
}

impl CdxjLine {
    pub fn offset(&self) -> u64 {
        self.offset.parse().unwrap_or_default()
    }

    pub fn length(&self) -> u64 {
        self.length.parse().unwrap_or_default()
    }

    pub fn render(&self) -> String {
        let json = serde_json::to_string(self).expect("cdxj payload serializes");
        format!("{} {} {}", self.urlkey, self.timestamp, json)
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.splitn(3, ' ');
        let urlkey = parts.next()?.to_string();
        let timestamp = parts.next()?.to_string();
        let mut parsed: CdxjLine = serde_json::from_str(parts.next()?).ok()?;
        parsed.urlkey = urlkey;
        parsed.timestamp = timestamp;
        Some(parsed)
    }
}

/// Indexes every response record in `warc`, sorted by (urlkey, timestamp).
/// Each line's offset/length is re-read to confirm it delimits the record.
pub fn build_cdxj(warc: impl AsRef<Path>) -> Result<Vec<CdxjLine>> {
    let warc = warc.as_ref();
    let filename = warc
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut lines = Vec::new();
    let mut ids = Vec::new();
    for item in read_records(warc)? {
        let item = item?;
        let rec = &item.record;
        if rec.record_type() != Some(RecordType::Response) {
            continue;
        }
        let Some(url) = rec.target_uri() else {
            continue;
        };
        let head = rec.http_head();
        let timestamp = rec
            .date()
            .map(|d| d.format("%Y%m%d%H%M%S").to_string())
            .unwrap_or_else(|| "00000000000000".into());
        let digest = rec
            .payload_digest()
            .or(rec.block_digest())
            .unwrap_or_default();
        lines.push(CdxjLine {
            urlkey: surt(url),
            timestamp,
            url: url.to_string(),
            mime: head
                .as_ref()
                .and_then(|h| h.mime())
                .unwrap_or_else(|| "unk".into()),
            status: head
                .as_ref()
                .and_then(|h| h.status)
                .map(|s| s.to_string())
                .unwrap_or_else(|| "-".into()),
            digest: digest.strip_prefix("sha1:").unwrap_or(digest).to_string(),
            length: item.length.to_string(),
            offset: item.offset.to_string(),
            filename: filename.clone(),
        });
        ids.push(rec.record_id().unwrap_or_default().to_string());
    }
    for (line, id) in lines.iter().zip(&ids) {
        let rec = read_record_at(warc, line.offset(), line.length())?;
        if rec.record_id() != Some(id.as_str()) {
            return Err(WarcError::corrupt(
                line.offset(),
                "index entry resolves to a different record",
            ));
        }
    }
    lines.sort_by(|a, b| (&a.urlkey, &a.timestamp).cmp(&(&b.urlkey, &b.timestamp)));
    Ok(lines)
}

pub fn write_cdxj(lines: &[CdxjLine], out: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(out)?;
    for l in lines {
        writeln!(f, "{}", l.render())?;
    }
    Ok(())
}

pub fn read_cdxj(path: impl AsRef<Path>) -> Result<Vec<CdxjLine>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(CdxjLine::parse(&line).ok_or_else(|| {
            WarcError::corrupt(i as u64, format!("malformed cdxj line {line:?}"))
        })?);
    }
    Ok(out)
}
