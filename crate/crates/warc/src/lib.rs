//! WARC/1.1 (ISO 28500) records: model, writer, reader, digests and CDXJ
//! indexing.
//!
//! Files are written either plain or with one gzip member per record. The
//! reader accepts both, verifies block digests as it goes, and reports the
//! byte position of anything it cannot make sense of.

mod cdxj;
mod digest;
mod error;
pub mod http;
mod reader;
mod record;
mod writer;

pub use cdxj::{build_cdxj, read_cdxj, surt, write_cdxj, CdxjLine};
pub use digest::{payload_digest, BlockHasher, DigestPair};
pub use error::WarcError;
pub use reader::{read_all, read_record_at, read_records, ReadRecord, WarcReader};
pub use record::{new_record_id, warc_date, RecordBuilder, RecordType, WarcRecord};
pub use writer::{Compression, RecordLocation, WarcWriter};

pub type Result<T, E = WarcError> = std::result::Result<T, E>;
