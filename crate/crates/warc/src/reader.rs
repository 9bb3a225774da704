use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use flate2::bufread::GzDecoder;

use crate::digest::payload_digest;
use crate::record::WarcRecord;
use crate::{Result, WarcError};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// A record together with its on-disk position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRecord {
    pub record: WarcRecord,
    pub offset: u64,
    /// On-disk length (compressed member length for gzip files).
    pub length: u64,
}

struct Counting<R> {
    inner: R,
    pos: u64,
}

impl<R: BufRead> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for Counting<R> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.pos += amt as u64;
        self.inner.consume(amt);
    }
}

enum ParseFail {
    Truncated(String),
    Malformed(String),
    Io(io::Error),
}

fn read_line<R: BufRead>(r: &mut R, buf: &mut Vec<u8>) -> std::result::Result<usize, ParseFail> {
    buf.clear();
    r.read_until(b'\n', buf).map_err(ParseFail::Io)
}

/// Parses one uncompressed record from `r`. `Ok(None)` at clean end of input.
fn parse_one<R: BufRead>(r: &mut R) -> std::result::Result<Option<WarcRecord>, ParseFail> {
    let mut line = Vec::with_capacity(128);
    // Tolerate stray blank lines between records.
    loop {
        if read_line(r, &mut line)? == 0 {
            return Ok(None);
        }
        if line != b"\r\n" && line != b"\n" {
            break;
        }
    }
    if !line.ends_with(b"\n") {
        return Err(ParseFail::Truncated("truncated version line".into()));
    }
    let version = String::from_utf8_lossy(&line).trim_end().to_string();
    if !version.starts_with("WARC/1.") {
        return Err(ParseFail::Malformed(format!("unknown version line {version:?}")));
    }
    let mut headers = Vec::new();
    loop {
        if read_line(r, &mut line)? == 0 || !line.ends_with(b"\n") {
            return Err(ParseFail::Truncated("truncated header block".into()));
        }
        if line == b"\r\n" || line == b"\n" {
            break;
        }
        let text = String::from_utf8_lossy(&line);
        let text = text.trim_end_matches(['\r', '\n']);
        let Some((name, value)) = text.split_once(':') else {
            return Err(ParseFail::Malformed(format!("bad header line {text:?}")));
        };
        headers.push((name.trim().to_string(), value.trim().to_string()));
    }
    let len: u64 = headers
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case("Content-Length"))
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| ParseFail::Malformed("missing or bad Content-Length".into()))?;
    let mut block = Vec::with_capacity(len.min(1 << 24) as usize);
    let got = r
        .by_ref()
        .take(len)
        .read_to_end(&mut block)
        .map_err(ParseFail::Io)?;
    if (got as u64) < len {
        return Err(ParseFail::Truncated(format!("block has {got} of {len} bytes")));
    }
    let mut tail = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut tail[filled..]).map_err(ParseFail::Io)?;
        if n == 0 {
            return Err(ParseFail::Truncated("missing record terminator".into()));
        }
        filled += n;
    }
    if &tail != b"\r\n\r\n" {
        return Err(ParseFail::Malformed("record not terminated by CRLF CRLF".into()));
    }
    Ok(Some(WarcRecord::from_parts(version, headers, block)))
}

fn check_digest(record: &WarcRecord) -> std::result::Result<(), String> {
    if let Some(expected) = record.block_digest() {
        if expected.starts_with("sha1:") {
            let actual = payload_digest(record.block());
            if actual != expected {
                return Err(format!("block digest mismatch: header {expected}, computed {actual}"));
            }
        }
    }
    Ok(())
}

/// Iterator over the records of a plain or gzip-per-record WARC stream.
///
/// A digest mismatch or a damaged gzip member yields a `CorruptRecord` item
/// and iteration resumes at the next record boundary. A truncated record
/// ends iteration.
pub struct WarcReader<R: BufRead> {
    inner: Counting<R>,
    done: bool,
}

impl<R: BufRead> WarcReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner: Counting { inner, pos: 0 },
            done: false,
        }
    }

    fn next_gzip(&mut self, offset: u64) -> Result<ReadRecord> {
        let mut data = Vec::new();
        let decoded = GzDecoder::new(&mut self.inner).read_to_end(&mut data);
        if let Err(e) = decoded {
            self.resync()?;
            return Err(WarcError::corrupt(offset, format!("bad gzip member: {e}")));
        }
        let length = self.inner.pos - offset;
        let mut slice = &data[..];
        let record = match parse_one(&mut slice) {
            Ok(Some(r)) => r,
            Ok(None) => return Err(WarcError::corrupt(offset, "empty gzip member")),
            Err(ParseFail::Io(e)) => return Err(e.into()),
            Err(ParseFail::Truncated(m)) | Err(ParseFail::Malformed(m)) => {
                return Err(WarcError::corrupt(offset, m))
            }
        };
        check_digest(&record).map_err(|m| WarcError::corrupt(offset, m))?;
        Ok(ReadRecord {
            record,
            offset,
            length,
        })
    }

    /// Skips forward to the next gzip member header.
    fn resync(&mut self) -> io::Result<()> {
        loop {
            let buf = self.inner.fill_buf()?;
            if buf.is_empty() {
                self.done = true;
                return Ok(());
            }
            if let Some(i) = buf.windows(3).position(|w| w == [0x1f, 0x8b, 0x08]) {
                self.inner.consume(i);
                return Ok(());
            }
            let keep = 2.min(buf.len());
            let skip = buf.len() - keep;
            if skip == 0 {
                // Fewer than 3 bytes left and no header: nothing more to read.
                let n = buf.len();
                self.inner.consume(n);
                self.done = true;
                return Ok(());
            }
            self.inner.consume(skip);
        }
    }

    fn next_plain(&mut self, offset: u64) -> Option<Result<ReadRecord>> {
        match parse_one(&mut self.inner) {
            Ok(None) => {
                self.done = true;
                None
            }
            Ok(Some(record)) => {
                let length = self.inner.pos - offset;
                Some(
                    check_digest(&record)
                        .map(|_| ReadRecord {
                            record,
                            offset,
                            length,
                        })
                        .map_err(|m| WarcError::corrupt(offset, m)),
                )
            }
            Err(fail) => {
                self.done = true;
                Some(Err(match fail {
                    ParseFail::Io(e) => e.into(),
                    ParseFail::Truncated(m) | ParseFail::Malformed(m) => {
                        WarcError::corrupt(offset, m)
                    }
                }))
            }
        }
    }
}

impl<R: BufRead> Iterator for WarcReader<R> {
    type Item = Result<ReadRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let offset = self.inner.pos;
        let head = match self.inner.fill_buf() {
            Ok(b) => b,
            Err(e) => {
                self.done = true;
                return Some(Err(e.into()));
            }
        };
        if head.is_empty() {
            self.done = true;
            return None;
        }
        if head.starts_with(&GZIP_MAGIC) {
            Some(self.next_gzip(offset))
        } else {
            self.next_plain(offset)
        }
    }
}

/// Opens `path` and iterates its records in file order.
pub fn read_records(path: impl AsRef<Path>) -> Result<WarcReader<BufReader<File>>> {
    Ok(WarcReader::new(BufReader::new(File::open(path)?)))
}

/// Reads every record, failing on the first error.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<ReadRecord>> {
    read_records(path)?.collect()
}

/// Reads exactly one record from `offset`, `length` bytes long.
pub fn read_record_at(path: impl AsRef<Path>, offset: u64, length: u64) -> Result<WarcRecord> {
    let mut file = File::open(path)?;
    file.seek(SeekFrom::Start(offset))?;
    let mut buf = Vec::with_capacity(length as usize);
    file.take(length).read_to_end(&mut buf)?;
    if (buf.len() as u64) != length {
        return Err(WarcError::corrupt(offset, "range extends past end of file"));
    }
    let mut reader = WarcReader::new(&buf[..]);
    let first = reader
        .next()
        .ok_or_else(|| WarcError::corrupt(offset, "no record at offset"))??;
    if first.length != length || reader.next().is_some() {
        return Err(WarcError::corrupt(
            offset,
            "range does not delimit exactly one record",
        ));
    }
    Ok(first.record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RecordType;
    use crate::writer::{Compression, WarcWriter};

    fn sample(n: usize) -> Vec<WarcRecord> {
        (0..n)
            .map(|i| {
                let body = format!("body {i}");
                WarcRecord::builder(RecordType::Response)
                    .target_uri(format!("http://example.com/{i}"))
                    .block(format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n{body}", body.len()))
                    .build()
            })
            .collect()
    }

    fn write(records: &[WarcRecord], mode: Compression) -> Vec<u8> {
        let mut w = WarcWriter::new(Vec::new(), mode);
        for r in records {
            w.write_record(r).unwrap();
        }
        w.into_inner().unwrap()
    }

    #[test]
    fn reads_back_both_modes() {
        let recs = sample(3);
        for mode in [Compression::None, Compression::GzipPerRecord] {
            let bytes = write(&recs, mode);
            let read: Vec<_> = WarcReader::new(&bytes[..]).collect::<Result<_>>().unwrap();
            assert_eq!(read.len(), 3);
            for (a, b) in read.iter().zip(&recs) {
                assert_eq!(&a.record, b);
            }
            assert_eq!(read[1].offset, read[0].offset + read[0].length);
        }
    }

    #[test]
    fn truncated_final_record_reports_offset() {
        let recs = sample(2);
        let bytes = write(&recs, Compression::None);
        let cut = &bytes[..bytes.len() - 10];
        let items: Vec<_> = WarcReader::new(cut).collect();
        assert_eq!(items.len(), 2);
        let first_len = items[0].as_ref().unwrap().length;
        match &items[1] {
            Err(WarcError::CorruptRecord { offset, .. }) => assert_eq!(*offset, first_len),
            other => panic!("expected corrupt record, got {other:?}"),
        }
    }

    #[test]
    fn gzip_corruption_resumes_at_next_member() {
        let recs = sample(3);
        let mut bytes = write(&recs, Compression::GzipPerRecord);
        let offsets: Vec<_> = WarcReader::new(&bytes[..])
            .map(|r| r.unwrap())
            .map(|r| (r.offset, r.length))
            .collect();
        // Flip a byte in the middle of the second member's deflate stream.
        let (o, l) = offsets[1];
        let mid = (o + l / 2) as usize;
        bytes[mid] ^= 0x55;
        let items: Vec<_> = WarcReader::new(&bytes[..]).collect();
        assert!(items[0].is_ok());
        assert!(matches!(items[1], Err(WarcError::CorruptRecord { offset, .. }) if offset == o));
        let last = items.last().unwrap().as_ref().unwrap();
        assert_eq!(last.record.target_uri(), Some("http://example.com/2"));
    }
}
