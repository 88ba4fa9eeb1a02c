//! Deterministic random streams.
//!
//! All randomness in the crate flows through this SplitMix64 generator so that
//! a (seed, stream) pair fully determines every draw, independent of platform
//! or dependency versions. The raw state is exposed for checkpointing.

/// SplitMix64 generator. 8 bytes of state, trivially serializable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

/// Stream tags keep independent consumers of the same seed decorrelated.
pub mod stream {
    pub const SAMPLER: u64 = 0x5a4d_0001;
    pub const AUGMENT: u64 = 0x5a4d_0002;
    pub const DROPOUT: u64 = 0x5a4d_0003;
    pub const INIT: u64 = 0x5a4d_0004;
    pub const SYNTH: u64 = 0x5a4d_0005;
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Independent stream derived from (seed, tag). Used for the named
    /// consumers in [`stream`].
    pub fn for_stream(seed: u64, tag: u64) -> Self {
        Rng {
            state: mix(seed ^ mix(tag)),
        }
    }

    /// Per-step stream, e.g. the dropout mask source for one training step.
    pub fn for_step(seed: u64, tag: u64, step: u64) -> Self {
        Rng {
            state: mix(mix(seed ^ mix(tag)) ^ mix(step.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// Raw state, for checkpoint serialization.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn from_state(state: u64) -> Self {
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the small ranges used here.
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Bernoulli draw.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = Rng::for_stream(7, stream::SAMPLER);
        let mut b = Rng::for_stream(7, stream::AUGMENT);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn state_round_trip() {
        let mut a = Rng::new(99);
        a.next_u64();
        let mut b = Rng::from_state(a.state());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut r = Rng::new(3);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut r = Rng::new(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }
}
