use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression as GzLevel;

use crate::record::WarcRecord;
use crate::{Result, WarcError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compression {
    /// Uncompressed records; used where byte identity matters.
    None,
    /// One gzip member per record, each independently decompressible.
    #[default]
    GzipPerRecord,
}

/// Where a record landed in the file. `length` is the on-disk size, so for
/// gzip files it is the size of the compressed member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordLocation {
    pub offset: u64,
    pub length: u64,
}

struct Counting<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Appends records to a WARC stream. Single writer per file.
pub struct WarcWriter<W: Write> {
    inner: W,
    offset: u64,
    compression: Compression,
}

impl WarcWriter<BufWriter<File>> {
    /// Creates (or truncates) `path`.
    pub fn create(path: impl AsRef<Path>, compression: Compression) -> Result<Self> {
        let file = File::create(path)?;
        Ok(Self::new(BufWriter::new(file), compression))
    }

    /// Opens `path` for appending; offsets continue from the current length.
    pub fn append(path: impl AsRef<Path>, compression: Compression) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let offset = file.metadata()?.len();
        let mut w = Self::new(BufWriter::new(file), compression);
        w.offset = offset;
        Ok(w)
    }
}

impl<W: Write> WarcWriter<W> {
    pub fn new(inner: W, compression: Compression) -> Self {
        Self {
            inner,
            offset: 0,
            compression,
        }
    }

    pub fn compression(&self) -> Compression {
        self.compression
    }

    /// Offset at which the next record will start.
    pub fn position(&self) -> u64 {
        self.offset
    }

    pub fn write_record(&mut self, record: &WarcRecord) -> Result<RecordLocation> {
        record.validate()?;
        let head = record.header_bytes();
        self.emit(&head, &mut record.block(), record.block().len() as u64)
    }

    /// Writes a record whose block is supplied by `block` rather than held in
    /// memory. `head` must carry every header, including a Content-Length equal
    /// to `len` and the block digest computed by the caller.
    pub fn write_streamed(
        &mut self,
        head: &WarcRecord,
        block: &mut dyn Read,
        len: u64,
    ) -> Result<RecordLocation> {
        if head.content_length() != Some(len) {
            return Err(WarcError::InvalidRecord(format!(
                "Content-Length {:?} does not match streamed length {len}",
                head.content_length()
            )));
        }
        if head.record_type().is_none() || head.record_id().is_none() {
            return Err(WarcError::InvalidRecord("incomplete header block".into()));
        }
        self.emit(&head.header_bytes(), block, len)
    }

    fn emit(&mut self, head: &[u8], block: &mut dyn Read, len: u64) -> Result<RecordLocation> {
        let offset = self.offset;
        let mut counting = Counting {
            inner: &mut self.inner,
            written: 0,
        };
        let copied = match self.compression {
            Compression::None => write_body(&mut counting, head, block)?,
            Compression::GzipPerRecord => {
                let mut gz = GzEncoder::new(&mut counting, GzLevel::default());
                let n = write_body(&mut gz, head, block)?;
                gz.finish()?;
                n
            }
        };
        let length = counting.written;
        self.offset += length;
        if copied != len {
            return Err(WarcError::InvalidRecord(format!(
                "block source yielded {copied} bytes, expected {len}"
            )));
        }
        Ok(RecordLocation { offset, length })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn write_body(out: &mut dyn Write, head: &[u8], block: &mut dyn Read) -> io::Result<u64> {
    out.write_all(head)?;
    let n = io::copy(block, out)?;
    out.write_all(b"\r\n\r\n")?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RecordType;

    fn response(body: &[u8]) -> WarcRecord {
        let mut block = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n", body.len()).into_bytes();
        block.extend_from_slice(body);
        WarcRecord::builder(RecordType::Response)
            .target_uri("http://example.com/a")
            .block(block)
            .build()
    }

    #[test]
    fn offsets_are_contiguous() {
        for mode in [Compression::None, Compression::GzipPerRecord] {
            let mut w = WarcWriter::new(Vec::new(), mode);
            let a = w.write_record(&response(b"one")).unwrap();
            let b = w.write_record(&response(b"two")).unwrap();
            assert_eq!(a.offset, 0);
            assert_eq!(b.offset, a.offset + a.length);
            assert_eq!(w.into_inner().unwrap().len() as u64, b.offset + b.length);
        }
    }

    #[test]
    fn empty_body_payload_digest() {
        let r = response(b"");
        assert_eq!(
            r.payload_digest(),
            Some("sha1:3I42H3S6NNFQ2MSVX7XZKYAYSCX5QBYJ")
        );
    }

    #[test]
    fn invalid_record_writes_nothing() {
        let mut r = response(b"abc");
        r.set_header("Content-Length", "1");
        let mut w = WarcWriter::new(Vec::new(), Compression::None);
        assert!(matches!(w.write_record(&r), Err(WarcError::InvalidRecord(_))));
        assert_eq!(w.position(), 0);
        assert!(w.into_inner().unwrap().is_empty());
    }

    #[test]
    fn streamed_matches_in_memory() {
        let r = response(b"streamed body");
        let digests = crate::record::digests_for(RecordType::Response, r.block());
        let head = WarcRecord::builder(RecordType::Response)
            .record_id(r.record_id().unwrap())
            .date(r.date().unwrap())
            .target_uri("http://example.com/a")
            .build_streamed(r.block().len() as u64, digests);
        let mut a = WarcWriter::new(Vec::new(), Compression::None);
        a.write_record(&r).unwrap();
        let mut b = WarcWriter::new(Vec::new(), Compression::None);
        b.write_streamed(&head, &mut r.block(), r.block().len() as u64)
            .unwrap();
        assert_eq!(a.into_inner().unwrap(), b.into_inner().unwrap());
    }
}
