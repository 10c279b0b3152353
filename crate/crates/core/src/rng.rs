//! Seed derivation for independent, order-free random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Copy, Debug)]
pub struct SeedKey(u64);

impl SeedKey {
    pub fn new(seed: u64) -> Self {
        SeedKey(splitmix(seed ^ FNV_OFFSET))
    }

    pub fn with_u64(self, v: u64) -> Self {
        SeedKey(splitmix(self.0 ^ splitmix(v)))
    }

    pub fn with_str(self, s: &str) -> Self {
        let mut h = FNV_OFFSET;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.with_u64(h)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
