use std::hash::Hasher;

use fnv::FnvHasher;

/// 64-bit FNV-1a over raw bytes.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Incremental FNV-1a, for hashing payloads as they are produced.
#[derive(Default)]
pub(crate) struct Fnv1a(FnvHasher);

impl Fnv1a {
    pub(crate) fn update(&mut self, bytes: &[u8]) {
        self.0.write(bytes);
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0.finish()
    }
}
