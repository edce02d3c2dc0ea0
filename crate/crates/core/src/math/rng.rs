//! Counter-based random streams (Philox4x32-10).
//!
//! A stream is addressed by `(seed, stream id)`; the n-th block is a pure
//! function of `(seed, stream id, n)`, so parallel runs never share state and
//! any draw sequence can be regenerated exactly.

use rand::Rng;
use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32-10 block.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(W0);
            key[1] = key[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, ctr[0]);
        let (hi1, lo1) = mulhilo(M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

/// Blocks computed per refill.
const LANES: usize = 8;

/// `LANES` consecutive Philox blocks starting at counter `start`.
#[inline]
fn philox_lanes(start: u64, stream: u64, seed: u64) -> [u32; 4 * LANES] {
    let key = [seed as u32, (seed >> 32) as u32];
    let mut out = [0u32; 4 * LANES];
    for (l, chunk) in out.chunks_exact_mut(4).enumerate() {
        let c = start.wrapping_add(l as u64);
        chunk.copy_from_slice(&philox4x32_10(
            [
                c as u32,
                (c >> 32) as u32,
                stream as u32,
                (stream >> 32) as u32,
            ],
            key,
        ));
    }
    out
}

/// Deterministic random stream keyed by `(seed, stream id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    /// Counter of the first block in `buf`.
    base: u64,
    buf: [u32; 4 * LANES],
    used: usize,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            base: 0u64.wrapping_sub(LANES as u64),
            buf: [0; 4 * LANES],
            used: 4 * LANES,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Number of 128-bit blocks consumed so far.
    pub fn counter(&self) -> u64 {
        self.base.wrapping_add(self.used.div_ceil(4) as u64)
    }

    #[inline]
    fn refill(&mut self) {
        self.base = self.base.wrapping_add(LANES as u64);
        self.buf = philox_lanes(self.base, self.stream, self.seed);
        self.used = 0;
    }

    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    /// Uniform ±1.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        if self.used == 4 * LANES {
            self.refill();
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        if self.used % 4 == 3 {
            // Drop the odd word so 64-bit draws stay block aligned.
            self.used += 1;
        }
        if self.used == 4 * LANES {
            self.refill();
        }
        let lo = self.buf[self.used] as u64;
        let hi = self.buf[self.used + 1] as u64;
        self.used += 2;
        lo | (hi << 32)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(4) {
            let v = self.next_u32().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
