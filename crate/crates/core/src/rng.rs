//! Counter-based Gaussian noise.
//!
//! Draw `k` of a stream is a pure function of `(seed, k)`:
//!
//! ```text
//! key      = mix64(seed)
//! bits(i)  = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)      (SplitMix64 state i)
//! u(i)     = ((bits(i) >> 11) + 1) * 2^-53                  in (0, 1]
//! pair p   : r = sqrt(-2 ln u(2p)),  θ = 2π u(2p + 1)
//! normal(k) = r cos θ  if k even,  r sin θ  if k odd        (p = k / 2)
//! ```
//!
//! Transcendentals come from `libm`, so the sequence is identical on every
//! platform and independent of how a range of indices is split across
//! workers.

use alloc::vec;
use alloc::vec::Vec;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer; a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    counter: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { seed, counter: 0 }
    }

    /// Stream positioned at an absolute draw index.
    pub fn at(seed: u64, counter: u64) -> Self {
        NoiseStream { seed, counter }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent stream for a sub-purpose (retry attempts, generator parts).
    pub fn derive(&self, tag: u64) -> NoiseStream {
        NoiseStream::new(mix64(self.seed ^ mix64(tag.wrapping_add(GOLDEN_GAMMA))))
    }

    #[inline]
    fn key(&self) -> u64 {
        mix64(self.seed)
    }

    #[inline]
    pub fn bits_at(&self, index: u64) -> u64 {
        mix64(
            self.key()
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in `(0, 1]`.
    #[inline]
    pub fn uniform_at(&self, index: u64) -> f64 {
        ((self.bits_at(index) >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw number `index` of this stream.
    #[inline]
    pub fn gaussian_at(&self, index: u64) -> f64 {
        let pair = index >> 1;
        let u1 = self.uniform_at(pair << 1);
        let u2 = self.uniform_at((pair << 1) | 1);
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let angle = core::f64::consts::TAU * u2;
        if index & 1 == 0 {
            radius * libm::cos(angle)
        } else {
            radius * libm::sin(angle)
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        let g = self.gaussian_at(self.counter);
        self.counter += 1;
        g
    }

    pub fn next_uniform(&mut self) -> f64 {
        let u = self.uniform_at(self.counter);
        self.counter += 1;
        u
    }

    /// Fills `out` with draws `counter .. counter + out.len()` and advances.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for slot in out.iter_mut() {
            *slot = self.next_gaussian();
        }
    }

    /// `count` standard-normal draws from the current counter.
    pub fn gaussian_draw(&mut self, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; count];
        self.fill_gaussian(&mut out);
        out
    }
}
