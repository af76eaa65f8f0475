//! Deterministic counter-based random number generation.
//!
//! Every consumer derives its stream from `(global seed, stream id)` and then
//! draws by advancing a counter through the splitmix64 finalizer. Streams are
//! independent of draw order elsewhere in the program, so ensembles can be
//! evaluated in parallel and still reproduce bit-identically.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: output `i` is `mix(key + i*GOLDEN)`.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    /// Stream keyed by `(seed, stream)`. Distinct streams are decorrelated by
    /// passing both through the finalizer before combining.
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix(seed ^ GOLDEN).wrapping_add(mix(stream.wrapping_mul(0xD130_2B97_9AF0_2B9E)));
        CounterRng { key, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        out
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Modulo bias is < 2^-40 for the n used here (partition/cell counts).
        self.next_u64() % n
    }
}
