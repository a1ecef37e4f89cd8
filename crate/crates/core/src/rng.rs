//! SplitMix64 used as a counter-based generator.
//!
//! Output `i` (0-based) of stream `key` is `mix64(key + (i + 1) * GAMMA)`
//! with wrapping arithmetic, so any draw can be recomputed from
//! `(key, i)` alone. Uniform doubles take the top 53 bits. Normals use
//! Box–Muller on two consecutive uniforms and discard the sine branch.
//! The same primitive derives sub-stream keys: `split_mix(seed, i)` is
//! output `i` of stream `seed`.

use std::f64::consts::PI;

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX2: u64 = 0x94D0_49BB_1331_11EB;

/// Human-readable description echoed into manifests and logs.
pub const DESCRIPTION: &str = "splitmix64 counter mode: x_i = mix64(key + (i+1)*0x9e3779b97f4a7c15), \
mix64(z) = z^=z>>30; z*=0xbf58476d1ce4e5b9; z^=z>>27; z*=0x94d049bb133111eb; z^=z>>31; \
uniform = (x>>11)*2^-53; normal = sqrt(-2 ln(1-u1)) cos(2 pi u2)";

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX2);
    z ^ (z >> 31)
}

/// Key of sub-stream `index` derived from `seed`.
#[inline]
pub fn split_mix(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// FNV-1a, used to key parameter streams by their path.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = split_mix(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        lo + (self.next_u64() % span) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Phase uniform on (−π, π].
    pub fn phase(&mut self) -> f64 {
        PI - 2.0 * PI * self.uniform()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}
