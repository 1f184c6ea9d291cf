//! Fixed pseudo-random generator for fold assignment and fixture synthesis.
//!
//! Fold splits and synthetic corpora must reproduce bit-for-bit across
//! platforms, library versions and reimplementations in other languages, so
//! the generator is pinned here instead of delegating to a platform RNG.
//! The exact construction:
//!
//! * **Seeding**: the 64-bit seed is expanded with SplitMix64
//!   (Steele/Lea/Flood mixer, increment `0x9E3779B97F4A7C15`) into the
//!   four-word state of the main generator.
//! * **Generator**: xoshiro256++ (Blackman/Vigna), output
//!   `rotl(s0 + s3, 23) + s0`.
//! * **Uniform `[0,1)`**: top 53 bits of `next_u64`, times `2^-53`.
//! * **Bounded integers**: Lemire multiply-shift,
//!   `(next_u64 as u128 * n as u128) >> 64`.
//! * **Shuffle**: Fisher–Yates from the back,
//!   `for i in (1..len).rev() { swap(i, bounded(i + 1)) }`.
//! * **Gaussian**: Box–Muller, `sqrt(-2 ln u1) * cos(2 pi u2)` with two
//!   fresh uniforms per draw and `u1` shifted into `(0,1]`; no caching of
//!   the second deviate.
//!
//! Any change to these rules silently invalidates recorded folds and
//! fixtures, so the known-answer tests below freeze the sequences.

/// Advances `state` by the SplitMix64 increment and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th (0-based) SplitMix64 output for an initial state `seed`,
/// without stepping through the preceding outputs. Used to derive one
/// independent sub-seed per fixture so any corpus element can be regenerated
/// on its own.
pub fn stream_seed(seed: u64, index: u64) -> u64 {
    let mut state = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(&mut state)
}

/// xoshiro256++ seeded via SplitMix64.
#[derive(Debug, Clone)]
pub struct SeededRng {
    s: [u64; 4],
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let s = [
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
        ];
        SeededRng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via the multiply-shift reduction.
    /// `n` must be nonzero.
    pub fn bounded(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal deviate via Box–Muller. Consumes exactly two uniforms.
    pub fn normal(&mut self) -> f64 {
        // Shift u1 into (0, 1] so the log is finite.
        let u1 = (self.next_f64() + (1.0 / (1u64 << 53) as f64)).min(1.0);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher–Yates shuffle, iterating from the back.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.bounded(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
