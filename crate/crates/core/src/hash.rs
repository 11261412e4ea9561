//! Seed-stable 64-bit FNV-1a hashing.
//!
//! Persisted models store hashed buckets, so the hash must not depend on the
//! Rust release or the platform. `std`'s `DefaultHasher` makes no such promise.

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy)]
pub struct StableHasher(u64);

impl StableHasher {
    pub fn new(seed: u64) -> Self {
        let mut h = StableHasher(OFFSET);
        h.write(&seed.to_le_bytes());
        h
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(PRIME);
        }
    }

    pub fn write_u32(&mut self, v: u32) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        // final avalanche so that low bits are usable for `mod` bucketing
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

pub fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = StableHasher::new(seed);
    h.write(bytes);
    h.finish()
}

/// Derives an independent child seed, e.g. per epoch or per candidate setting.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = StableHasher::new(seed);
    for p in parts {
        h.write(&p.to_le_bytes());
    }
    h.finish()
}
