//! Counter-based RNG for per-node decisions.
//!
//! Exploration coins and dropout masks are keyed by (seed, layer, node,
//! epoch) so a decision is replayable in isolation: the same key always
//! yields the same stream regardless of evaluation order.

/// SplitMix64 step.
#[inline]
fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic stream derived from a tuple of context keys.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    state: u64,
}

impl KeyedRng {
    pub fn new(keys: &[u64]) -> KeyedRng {
        let mut state = 0x243F6A8885A308D3u64; // arbitrary nonzero start
        for &k in keys {
            state ^= splitmix64(&mut { state ^ k }).wrapping_add(k);
            splitmix64(&mut state);
        }
        KeyedRng { state }
    }

    /// Per-node decision stream.
    pub fn for_node(seed: u64, layer: usize, node: usize, epoch: u64) -> KeyedRng {
        KeyedRng::new(&[seed, layer as u64, node as u64, epoch])
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in 0..n.
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_replayable() {
        let mut a = KeyedRng::for_node(7, 1, 42, 3);
        let mut b = KeyedRng::for_node(7, 1, 42, 3);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_keys_decorrelate() {
        let a: Vec<u64> = {
            let mut r = KeyedRng::for_node(7, 1, 42, 3);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = KeyedRng::for_node(7, 1, 43, 3);
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a, b);
    }

    #[test]
    fn unit_interval_samples() {
        let mut r = KeyedRng::new(&[9]);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn index_draws_cover_range_roughly_uniformly() {
        let mut r = KeyedRng::new(&[11]);
        let mut counts = [0usize; 5];
        let n = 50_000;
        for _ in 0..n {
            counts[r.next_index(5)] += 1;
        }
        for &c in &counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.2).abs() < 0.02, "skewed bucket: {frac}");
        }
    }
}
