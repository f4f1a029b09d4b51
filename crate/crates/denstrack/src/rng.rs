//! Counter-based deterministic random numbers for Monte Carlo runs.
//!
//! Each stream is keyed by (seed, stream index), so path i always sees the
//! same draws no matter how work is scheduled across threads. The generator
//! is the splitmix64 finalizer applied to key + counter * GAMMA with
//!
//!   GAMMA = 0x9E3779B97F4A7C15
//!   mix:  z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!         z ^= z >> 27; z *= 0x94D049BB133111EB;
//!         z ^= z >> 31
//!
//! Gaussian draws use the Box-Muller cosine branch (two uniforms per normal,
//! no carried state); Cauchy draws use the inverse CDF tan(pi (u - 1/2)).

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MULT_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MULT_2: u64 = 0x94D0_49BB_1331_11EB;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MULT_1);
    z = (z ^ (z >> 27)).wrapping_mul(MULT_2);
    z ^ (z >> 31)
}

/// Keyed counter generator. `Clone` + `Copy` cheap; owning one per path is
/// the intended usage.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    /// Stream `stream` of the generator family identified by `seed`.
    pub fn keyed(seed: u64, stream: u64) -> Self {
        Self {
            key: mix64(seed ^ mix64(stream.wrapping_mul(GAMMA).wrapping_add(GAMMA))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let z = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)));
        self.counter = self.counter.wrapping_add(1);
        z
    }

    /// Uniform in [0, 1), 53 usable bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box-Muller, cosine branch only.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // in (0, 1], keeps ln finite
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Standard Cauchy via inverse CDF.
    #[inline]
    pub fn cauchy(&mut self) -> f64 {
        (std::f64::consts::PI * (self.uniform() - 0.5)).tan()
    }
}
