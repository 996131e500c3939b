//! Splittable random streams.
//!
//! A stream is identified by a 128-bit key. `split(i)` derives a child key from
//! the parent key and `i` alone, so the child does not depend on how many draws
//! the parent has made. Draws within a stream come from xoshiro256++ seeded with
//! the expanded key.

use rand::RngCore;
use rand_xoshiro::Xoshiro256PlusPlus;
use rand::SeedableRng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic pseudo-random stream that can be split by index path.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: [u64; 2],
    gen: Xoshiro256PlusPlus,
}

impl RngStream {
    /// Root stream for a master seed.
    pub fn from_seed(seed: u64) -> Self {
        Self::from_key([mix64(seed ^ 0x6a09_e667_f3bc_c908), mix64(seed.wrapping_add(GOLDEN))])
    }

    fn from_key(key: [u64; 2]) -> Self {
        let mut s = key[0] ^ key[1].rotate_left(32);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            s = s.wrapping_add(GOLDEN);
            let word = mix64(s ^ key[1]);
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        RngStream {
            key,
            gen: Xoshiro256PlusPlus::from_seed(seed),
        }
    }

    /// Child stream for `index`. Depends only on this stream's key and `index`.
    pub fn split(&self, index: u64) -> RngStream {
        let a = mix64(self.key[0] ^ mix64(index.wrapping_add(GOLDEN)));
        let b = mix64(self.key[1] ^ mix64(index ^ 0xd1b5_4a32_d192_ed03) ^ a.rotate_left(17));
        Self::from_key([a, b])
    }

    /// Splits along a path of indices, `split(p0).split(p1)...`.
    pub fn split_path(&self, path: &[u64]) -> RngStream {
        path.iter().fold(self.clone_key(), |s, &i| s.split(i))
    }

    fn clone_key(&self) -> RngStream {
        Self::from_key(self.key)
    }

    /// The key identifying this stream, independent of draws made so far.
    pub fn key(&self) -> [u64; 2] {
        self.key
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.gen.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.gen.fill_bytes(dst)
    }
}
