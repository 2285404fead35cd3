//! Counter-keyed SplitMix64 generator.
//!
//! A stream is keyed by `(seed, index, stream)`:
//!
//! ```text
//! state0 = mix(seed ^ mix(index * 0xD1B54A32D192ED03 + stream * 0xABC98388FB8FAC03 + 0x8CB92BA72F3D8DD7))
//! next:   state += 0x9E3779B97F4A7C15; return mix(state)
//! mix(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!         z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!         z ^ (z >> 31)
//! ```
//!
//! All arithmetic wraps modulo 2^64. Uniform doubles take the top 53 bits;
//! normals use Box-Muller with the cosine branch only.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to derive stream ids from parameter names.
pub fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn keyed(seed: u64, index: u64, stream: u64) -> Self {
        let k = index
            .wrapping_mul(0xD1B5_4A32_D192_ED03)
            .wrapping_add(stream.wrapping_mul(0xABC9_8388_FB8F_AC03))
            .wrapping_add(0x8CB9_2BA7_2F3D_8DD7);
        Self::new(mix(seed ^ mix(k)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
