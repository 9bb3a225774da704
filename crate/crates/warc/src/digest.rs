use data_encoding::BASE32_NOPAD;
use sha1::{Digest, Sha1};

/// `sha1:` followed by the unpadded upper-case base32 of the SHA-1 of `payload`.
pub fn payload_digest(payload: &[u8]) -> String {
    let mut h = BlockHasher::new();
    h.update(payload);
    h.finish()
}

/// Incremental form of [`payload_digest`], for blocks that arrive in pieces.
#[derive(Clone, Default)]
pub struct BlockHasher {
    inner: Sha1,
    len: u64,
}

impl BlockHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
        self.len += bytes.len() as u64;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn finish(self) -> String {
        format!("sha1:{}", BASE32_NOPAD.encode(&self.inner.finalize()))
    }
}

/// Block and payload digests of one HTTP exchange record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestPair {
    pub block: String,
    pub payload: Option<String>,
}
