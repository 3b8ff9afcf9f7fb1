//! Order-independent seeding. Every random draw in the pipeline comes from a
//! generator keyed by the identity of the thing being sampled (video, frame,
//! box, ...), so results do not depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::BoundingBox;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incremental key builder; the resulting seed is a pure function of the
/// sequence of values fed in.
#[derive(Debug, Clone, Copy)]
pub struct SeedKey(u64);

impl SeedKey {
    pub fn new(seed: u64) -> Self {
        SeedKey(splitmix64(seed))
    }

    pub fn u64(self, v: u64) -> Self {
        SeedKey(splitmix64(self.0 ^ splitmix64(v)))
    }

    pub fn str(self, s: &str) -> Self {
        let mut h = FNV_OFFSET;
        for b in s.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.u64(h).u64(s.len() as u64)
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub fn bbox(self, b: &BoundingBox) -> Self {
        b.coords().iter().fold(self, |k, c| k.f64(*c))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
