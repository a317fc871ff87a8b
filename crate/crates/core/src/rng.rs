//! Seedable, counter-based random streams.
//!
//! Every randomized operation takes an [`RngStream`]. A stream is identified
//! by `(seed, stream_id)`; forking derives a child stream from those two
//! numbers and a tag, never from the parent's consumption state, so the
//! layout of a computation does not depend on how much randomness earlier
//! steps happened to draw.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for a named purpose. Same `(seed, stream_id, tag)` always
    /// yields the same child.
    pub fn fork(&self, tag: &str) -> RngStream {
        RngStream::new(self.seed, mix(self.stream_id, hash_str(tag)))
    }

    /// Child stream keyed by an integer (stage index, member index, ...).
    pub fn fork_index(&self, tag: &str, index: u64) -> RngStream {
        RngStream::new(self.seed, mix(mix(self.stream_id, hash_str(tag)), index))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

// splitmix64 finalizer
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(a << 6);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a; stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
