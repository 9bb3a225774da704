use std::fs;
use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use tracer_warc::{
    build_cdxj, payload_digest, read_all, read_record_at, read_records, Compression, RecordType,
    WarcError, WarcRecord, WarcWriter,
};

/// Reference values computed with Python's hashlib + base64.b32encode.
const DIGEST_ORACLE: &[(&[u8], &str)] = &[
    (b"", "sha1:3I42H3S6NNFQ2MSVX7XZKYAYSCX5QBYJ"),
    (b"abc", "sha1:VGMT4NSHA2AWVOR6EVYXQUGCNSONBWE5"),
    (b"hello world", "sha1:FKXGYNOJJ7H3IFO35FPUBC445EPOQRXN"),
    (b"\x00", "sha1:LOUTZHNQZ74T6UVVEHLUEDSD63W2E6CP"),
    (b"\xff\xff\xff", "sha1:PBTQ5CFJYLDRCESEOHJPESUNXSGOLW5J"),
    (
        b"The quick brown fox jumps over the lazy dog",
        "sha1:F7KODRT2FUUPZ3MET3Q3W5XHHENZH2YS",
    ),
    (b"<html><body>x</body></html>\n", "sha1:IU2Y5K3LR4KI5LKCPO5JZIKVJP7ACGKW"),
    (b"\r\n\r\n", "sha1:M2JI43F3LHB2HPHGA2KZ55FIMX7AJZSC"),
];

fn long_payloads() -> Vec<(Vec<u8>, &'static str)> {
    vec![
        (vec![b'a'; 1000], "sha1:FEPJU3DGTFEUTNL3UXTFANQ6TD6DNMN2"),
        ((0..=255u8).collect(), "sha1:JELNNPNX66HGQA3JRSVTFUKYN2SFPX6I"),
    ]
}

#[test]
fn digests_match_reference_oracle() {
    for (payload, expected) in DIGEST_ORACLE {
        assert_eq!(payload_digest(payload), *expected);
    }
    for (payload, expected) in long_payloads() {
        assert_eq!(payload_digest(&payload), expected);
    }
}

fn http_response(body: &[u8], status: u16) -> Vec<u8> {
    let mut b = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: text/html\r\nContent-Length: {}\r\n\r\n",
        body.len()
    )
    .into_bytes();
    b.extend_from_slice(body);
    b
}

fn fixed_records() -> Vec<WarcRecord> {
    let date = Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap();
    let info = WarcRecord::builder(RecordType::Warcinfo)
        .record_id("<urn:uuid:00000000-0000-4000-8000-000000000001>")
        .date(date)
        .block(&b"software: tracer-warc\r\nformat: WARC File Format 1.1\r\n"[..])
        .build();
    let resp = WarcRecord::builder(RecordType::Response)
        .record_id("<urn:uuid:00000000-0000-4000-8000-000000000003>")
        .date(date)
        .target_uri("http://example.com/")
        .block(http_response(b"<html>hi</html>", 200))
        .build();
    let req = WarcRecord::builder(RecordType::Request)
        .record_id("<urn:uuid:00000000-0000-4000-8000-000000000002>")
        .date(date)
        .target_uri("http://example.com/")
        .concurrent_to(resp.record_id().unwrap())
        .block(&b"GET / HTTP/1.1\r\nHost: example.com\r\n\r\n"[..])
        .build();
    vec![info, req, resp]
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// The committed fixture was produced by this writer and checked with
/// `warcio check` / `warcio index`. Set REGENERATE_WARC_FIXTURE=1 to rewrite it.
#[test]
fn three_record_fixture() {
    let path = data_dir().join("three-records.warc");
    let mut w = WarcWriter::new(Vec::new(), Compression::None);
    for r in fixed_records() {
        w.write_record(&r).unwrap();
    }
    let bytes = w.into_inner().unwrap();
    if std::env::var_os("REGENERATE_WARC_FIXTURE").is_some() {
        fs::write(&path, &bytes).unwrap();
    }
    assert_eq!(fs::read(&path).unwrap(), bytes, "writer output drifted from fixture");
    let types: Vec<_> = read_all(&path)
        .unwrap()
        .into_iter()
        .map(|r| r.record.record_type().unwrap())
        .collect();
    assert_eq!(
        types,
        [RecordType::Warcinfo, RecordType::Request, RecordType::Response]
    );
}

fn arb_record() -> impl Strategy<Value = WarcRecord> {
    (
        prop::collection::vec(any::<u8>(), 0..300),
        prop::sample::select(vec![200u16, 301, 404, 500]),
        "[a-z]{1,8}",
        prop::bool::ANY,
    )
        .prop_map(|(body, status, path, as_request)| {
            if as_request {
                let mut block = format!("POST /{path} HTTP/1.1\r\nHost: h\r\nContent-Length: {}\r\n\r\n", body.len()).into_bytes();
                block.extend_from_slice(&body);
                WarcRecord::builder(RecordType::Request)
                    .target_uri(format!("http://h/{path}"))
                    .block(block)
                    .build()
            } else {
                WarcRecord::builder(RecordType::Response)
                    .target_uri(format!("http://h/{path}"))
                    .block(http_response(&body, status))
                    .build()
            }
        })
}

proptest! {
    #[test]
    fn plain_mode_round_trips_byte_for_byte(records in prop::collection::vec(arb_record(), 0..6)) {
        let mut w = WarcWriter::new(Vec::new(), Compression::None);
        for r in &records {
            w.write_record(r).unwrap();
        }
        let original = w.into_inner().unwrap();
        let read: Vec<_> = tracer_warc::WarcReader::new(&original[..])
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(read.len(), records.len());
        let mut again = Vec::new();
        for r in &read {
            again.extend_from_slice(&r.record.to_bytes());
        }
        prop_assert_eq!(again, original);
    }

    #[test]
    fn gzip_mode_reads_back_same_records(records in prop::collection::vec(arb_record(), 1..5)) {
        let mut w = WarcWriter::new(Vec::new(), Compression::GzipPerRecord);
        for r in &records {
            w.write_record(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let read: Vec<_> = tracer_warc::WarcReader::new(&bytes[..])
            .map(|r| r.unwrap().record)
            .collect();
        prop_assert_eq!(read, records);
    }
}

#[test]
fn every_single_payload_byte_corruption_is_detected() {
    let body = b"<html><body>payload under test</body></html>";
    let rec = WarcRecord::builder(RecordType::Response)
        .target_uri("http://example.com/p")
        .block(http_response(body, 200))
        .build();
    let mut w = WarcWriter::new(Vec::new(), Compression::None);
    w.write_record(&fixed_records()[0]).unwrap();
    let loc = w.write_record(&rec).unwrap();
    let bytes = w.into_inner().unwrap();
    let block_start = loc.offset as usize + rec.header_bytes().len();
    for i in block_start..block_start + rec.block().len() {
        let mut damaged = bytes.clone();
        damaged[i] ^= 0x01;
        let items: Vec<_> = tracer_warc::WarcReader::new(&damaged[..]).collect();
        assert!(items[0].is_ok());
        assert!(
            matches!(items[1], Err(WarcError::CorruptRecord { offset, .. }) if offset == loc.offset),
            "byte {i} corruption not attributed to the record"
        );
    }
}

#[test]
fn gzip_byte_corruption_is_detected() {
    let records = fixed_records();
    let mut w = WarcWriter::new(Vec::new(), Compression::GzipPerRecord);
    let locs: Vec<_> = records.iter().map(|r| w.write_record(r).unwrap()).collect();
    let bytes = w.into_inner().unwrap();
    let target = locs[2];
    // Skip the 10-byte gzip header and the 8-byte trailer's length field.
    for i in (target.offset + 10)..(target.offset + target.length - 4) {
        let mut damaged = bytes.clone();
        damaged[i as usize] ^= 0x20;
        let items: Vec<_> = tracer_warc::WarcReader::new(&damaged[..]).collect();
        assert!(
            items.iter().any(|r| matches!(r, Err(WarcError::CorruptRecord { .. }))),
            "corruption at byte {i} went unnoticed"
        );
    }
}

fn write_file(dir: &std::path::Path, name: &str, records: &[WarcRecord], mode: Compression) -> PathBuf {
    let path = dir.join(name);
    let mut w = WarcWriter::create(&path, mode).unwrap();
    for r in records {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
    path
}

#[test]
fn cdxj_sorted_by_surt_and_offsets_resolve() {
    let dir = tempfile::tempdir().unwrap();
    let date = Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap();
    let mk = |uri: &str| {
        WarcRecord::builder(RecordType::Response)
            .date(date)
            .target_uri(uri)
            .block(http_response(uri.as_bytes(), 200))
            .build()
    };
    let records = vec![fixed_records()[0].clone(), mk("http://b.example/y"), mk("http://a.example/x")];
    for mode in [Compression::None, Compression::GzipPerRecord] {
        let path = write_file(dir.path(), "t.warc.gz", &records, mode);
        let lines = build_cdxj(&path).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].urlkey, "example,a)/x");
        assert_eq!(lines[1].urlkey, "example,b)/y");
        assert_eq!(lines[0].timestamp, "20260102030405");
        assert_eq!(lines[0].status, "200");
        assert_eq!(lines[0].mime, "text/html");
        for l in &lines {
            let rec = read_record_at(&path, l.offset(), l.length()).unwrap();
            assert_eq!(rec.target_uri(), Some(l.url.as_str()));
        }
    }
}

#[test]
fn warcinfo_only_file_has_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "e.warc.gz", &fixed_records()[..1], Compression::GzipPerRecord);
    assert!(build_cdxj(&path).unwrap().is_empty());
    assert_eq!(read_records(&path).unwrap().count(), 1);
}
