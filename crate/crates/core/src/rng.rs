//! Deterministic seeded randomness for simulation runs.
//!
//! Every node owns independent streams derived from `(run seed, node id,
//! purpose)`, so results do not depend on iteration order and any single
//! node's draws can be replayed in isolation. The generator is splitmix64:
//! fast, stable across platforms, and not suitable for anything
//! security-related.

/// What a per-node stream is used for. Each purpose gets its own stream so
/// that, e.g., failure draws never perturb protocol draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Failure = 0,
    Policy = 1,
    ShuffleSelect = 2,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// A splitmix64 stream.
#[derive(Clone, Debug)]
pub struct Stream {
    state: u64,
}

impl Stream {
    /// Stream keyed by (run seed, node id, purpose).
    pub fn for_node(seed: u64, node: u32, purpose: Purpose) -> Self {
        let key = mix(seed) ^ mix(((node as u64) << 8) | purpose as u64);
        Stream { state: mix(key) }
    }

    /// Plain seeded stream, for non-node uses (tests, shuffling cells).
    pub fn from_seed(seed: u64) -> Self {
        Stream { state: mix(seed) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in 0..n. Panics when n == 0.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Bernoulli draw with probability `p`.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        self.next_f64() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = Stream::for_node(42, 7, Purpose::Policy);
        let mut b = Stream::for_node(42, 7, Purpose::Policy);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn purposes_are_independent() {
        let mut a = Stream::for_node(42, 7, Purpose::Policy);
        let mut b = Stream::for_node(42, 7, Purpose::Failure);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn chance_extremes() {
        let mut s = Stream::from_seed(1);
        assert!(!s.chance(0.0));
        assert!(s.chance(1.0));
    }

    #[test]
    fn f64_in_unit_interval() {
        let mut s = Stream::from_seed(3);
        for _ in 0..1000 {
            let x = s.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
