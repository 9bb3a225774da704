//! HTTP/1.1 message relay: reads a message from one side, forwards its
//! exact bytes to the other and keeps a copy for the archive.

use std::io::{self, Read, Seek, SeekFrom, Write};

use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tracer_warc::BlockHasher;

const MAX_HEAD: usize = 64 * 1024;
const MAX_HEADERS: usize = 128;

/// Reads a message head up to and including the blank line. Leading empty
/// lines are skipped. `Ok(None)` means the peer closed before sending one.
pub(crate) async fn read_head<R: AsyncBufRead + Unpin>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut head = Vec::new();
    loop {
        let start = head.len();
        let n = r.read_until(b'\n', &mut head).await?;
        if n == 0 {
            return if head.iter().all(|b| b.is_ascii_whitespace()) {
                Ok(None)
            } else {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated message head"))
            };
        }
        let line = &head[start..];
        if line == b"\r\n" || line == b"\n" {
            if start == 0 {
                head.clear();
                continue;
            }
            return Ok(Some(head));
        }
        if head.len() > MAX_HEAD {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "message head too large"));
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Head {
    pub method: String,
    pub target: String,
    pub status: u16,
    pub headers: Vec<(String, Vec<u8>)>,
}

impl Head {
    pub fn header(&self, name: &str) -> Option<&[u8]> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_slice())
    }

    fn header_has_token(&self, name: &str, token: &str) -> bool {
        self.headers
            .iter()
            .filter(|(n, _)| n.eq_ignore_ascii_case(name))
            .flat_map(|(_, v)| String::from_utf8_lossy(v).split(',').map(|t| t.trim().to_ascii_lowercase()).collect::<Vec<_>>())
            .any(|t| t == token)
    }

    pub fn is_chunked(&self) -> bool {
        self.header_has_token("transfer-encoding", "chunked")
    }

    pub fn wants_close(&self) -> bool {
        self.header_has_token("connection", "close")
    }

    pub fn content_length(&self) -> io::Result<Option<u64>> {
        match self.header("content-length") {
            None => Ok(None),
            Some(v) => std::str::from_utf8(v)
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .map(Some)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad Content-Length")),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

fn collect_headers(hs: &[httparse::Header<'_>]) -> Vec<(String, Vec<u8>)> {
    hs.iter().map(|h| (h.name.to_string(), h.value.to_vec())).collect()
}

pub(crate) fn parse_request(raw: &[u8]) -> io::Result<Head> {
    let mut hs = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut hs);
    match req.parse(raw).map_err(invalid)? {
        httparse::Status::Complete(_) => Ok(Head {
            method: req.method.unwrap_or_default().to_string(),
            target: req.path.unwrap_or_default().to_string(),
            status: 0,
            headers: collect_headers(req.headers),
        }),
        httparse::Status::Partial => Err(invalid("partial request head")),
    }
}

pub(crate) fn parse_response(raw: &[u8]) -> io::Result<Head> {
    let mut hs = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut resp = httparse::Response::new(&mut hs);
    match resp.parse(raw).map_err(invalid)? {
        httparse::Status::Complete(_) => Ok(Head {
            method: String::new(),
            target: String::new(),
            status: resp.code.unwrap_or_default(),
            headers: collect_headers(resp.headers),
        }),
        httparse::Status::Partial => Err(invalid("partial response head")),
    }
}

/// How the end of a message body is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Framing {
    Empty,
    Length(u64),
    Chunked,
    UntilClose,
}

pub(crate) fn request_framing(h: &Head) -> io::Result<Framing> {
    if h.is_chunked() {
        Ok(Framing::Chunked)
    } else {
        Ok(match h.content_length()? {
            Some(0) | None => Framing::Empty,
            Some(n) => Framing::Length(n),
        })
    }
}

pub(crate) fn response_framing(method: &str, h: &Head) -> io::Result<Framing> {
    if method.eq_ignore_ascii_case("HEAD") || (100..200).contains(&h.status) || h.status == 204 || h.status == 304 {
        return Ok(Framing::Empty);
    }
    if h.is_chunked() {
        return Ok(Framing::Chunked);
    }
    Ok(match h.content_length()? {
        Some(0) => Framing::Empty,
        Some(n) => Framing::Length(n),
        None => Framing::UntilClose,
    })
}

/// Body storage that moves from memory to an anonymous temp file once it
/// grows past a threshold.
pub(crate) enum Spill {
    Mem(Vec<u8>),
    File(std::fs::File, u64),
}

impl Spill {
    pub fn new() -> Self {
        Spill::Mem(Vec::new())
    }

    pub fn len(&self) -> u64 {
        match self {
            Spill::Mem(v) => v.len() as u64,
            Spill::File(_, n) => *n,
        }
    }

    fn push(&mut self, bytes: &[u8], threshold: usize) -> io::Result<()> {
        match self {
            Spill::Mem(v) if v.len() + bytes.len() <= threshold => {
                v.extend_from_slice(bytes);
            }
            Spill::Mem(v) => {
                let mut f = tempfile::tempfile()?;
                f.write_all(v)?;
                f.write_all(bytes)?;
                let n = (v.len() + bytes.len()) as u64;
                *self = Spill::File(f, n);
            }
            Spill::File(f, n) => {
                f.write_all(bytes)?;
                *n += bytes.len() as u64;
            }
        }
        Ok(())
    }

    #[cfg(test)]
    pub fn is_spilled(&self) -> bool {
        matches!(self, Spill::File(..))
    }

    /// A reader over the whole content, from the start.
    pub fn reader(&mut self) -> io::Result<Box<dyn Read + '_>> {
        match self {
            Spill::Mem(v) => Ok(Box::new(v.as_slice())),
            Spill::File(f, _) => {
                f.flush()?;
                f.seek(SeekFrom::Start(0))?;
                Ok(Box::new(f))
            }
        }
    }

    pub fn into_vec(mut self) -> io::Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.len() as usize);
        self.reader()?.read_to_end(&mut out)?;
        Ok(out)
    }
}

/// Destination of a relayed body: the other party (while it listens), the
/// archive copy, and the two digests.
pub(crate) struct Tee<'a, W> {
    pub peer: Option<&'a mut W>,
    pub copy: Spill,
    pub threshold: usize,
    pub block: BlockHasher,
    pub payload: BlockHasher,
    pub peer_error: Option<io::Error>,
}

impl<'a, W: AsyncWrite + Unpin> Tee<'a, W> {
    pub fn new(peer: Option<&'a mut W>, threshold: usize) -> Self {
        Self {
            peer,
            copy: Spill::new(),
            threshold,
            block: BlockHasher::new(),
            payload: BlockHasher::new(),
            peer_error: None,
        }
    }

    pub async fn forward(&mut self, bytes: &[u8]) {
        if let Some(p) = self.peer.as_mut() {
            if let Err(e) = p.write_all(bytes).await {
                self.peer = None;
                self.peer_error = Some(e);
            }
        }
    }

    /// Framing bytes: stored and forwarded but not part of the payload.
    pub async fn raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.forward(bytes).await;
        self.block.update(bytes);
        self.copy.push(bytes, self.threshold)
    }

    pub async fn data(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.payload.update(bytes);
        self.raw(bytes).await
    }

    pub async fn flush(&mut self) {
        if let Some(p) = self.peer.as_mut() {
            if let Err(e) = p.flush().await {
                self.peer = None;
                self.peer_error = Some(e);
            }
        }
    }
}

const BUF: usize = 64 * 1024;

async fn copy_exact<R, W>(r: &mut R, mut n: u64, tee: &mut Tee<'_, W>) -> io::Result<()>
where
    R: AsyncBufRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut buf = vec![0u8; BUF];
    while n > 0 {
        let want = (n as usize).min(BUF);
        let got = r.read(&mut buf[..want]).await?;
        if got == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "body ended early"));
        }
        tee.data(&buf[..got]).await?;
        n -= got as u64;
    }
    Ok(())
}

async fn read_line<R: AsyncBufRead + Unpin>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line).await?;
    if n == 0 || !line.ends_with(b"\n") {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated chunk framing"));
    }
    if line.len() > MAX_HEAD {
        return Err(invalid("chunk line too long"));
    }
    Ok(line)
}

/// Relays one body. Payload bytes (dechunked) feed the payload digest.
pub(crate) async fn relay_body<R, W>(r: &mut R, framing: Framing, tee: &mut Tee<'_, W>) -> io::Result<()>
where
    R: AsyncBufRead + Unpin,
    W: AsyncWrite + Unpin,
{
    match framing {
        Framing::Empty => {}
        Framing::Length(n) => copy_exact(r, n, tee).await?,
        Framing::UntilClose => {
            let mut buf = vec![0u8; BUF];
            loop {
                let got = r.read(&mut buf).await?;
                if got == 0 {
                    break;
                }
                tee.data(&buf[..got]).await?;
            }
        }
        Framing::Chunked => loop {
            let line = read_line(r).await?;
            tee.raw(&line).await?;
            let text = String::from_utf8_lossy(&line);
            let size_text = text.split(';').next().unwrap_or("").trim();
            let size = u64::from_str_radix(size_text, 16).map_err(|_| invalid(format!("bad chunk size {size_text:?}")))?;
            if size == 0 {
                loop {
                    let trailer = read_line(r).await?;
                    tee.raw(&trailer).await?;
                    if trailer == b"\r\n" || trailer == b"\n" {
                        break;
                    }
                }
                break;
            }
            copy_exact(r, size, tee).await?;
            let crlf = read_line(r).await?;
            tee.raw(&crlf).await?;
        },
    }
    tee.flush().await;
    Ok(())
}
