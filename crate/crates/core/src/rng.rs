//! SplitMix64 generator and counter-based noise.
//!
//! The whole state is one `u64`, which is what the checkpoint format stores.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; the bias is < n / 2^64.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform in `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        self.next_f64() * 2.0 - 1.0
    }

    pub fn symmetric_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.symmetric()).collect()
    }
}

/// U(0,1) noise value for absolute sample index `t` under `seed`.
///
/// Being a pure function of `(seed, t)` is what lets chunked streaming
/// reproduce the offline noise vector exactly.
#[inline]
pub fn noise_at(seed: u64, t: u64) -> f64 {
    let z = mix(seed ^ mix(t.wrapping_add(1).wrapping_mul(GOLDEN)));
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Noise samples for the absolute index range `[start, start + len)`.
pub fn noise_range(seed: u64, start: usize, len: usize) -> Vec<f64> {
    (start..start + len).map(|t| noise_at(seed, t as u64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sequence() {
        // Published SplitMix64 outputs for seed 1234567.
        let mut r = SplitMix64::new(1234567);
        assert_eq!(r.next_u64(), 6457827717110365317);
        assert_eq!(r.next_u64(), 3203168211198807973);
        assert_eq!(r.next_u64(), 9817491932198370423);
    }

    #[test]
    fn unit_interval() {
        let mut r = SplitMix64::new(7);
        for _ in 0..10_000 {
            let v = r.next_f64();
            assert!((0.0..1.0).contains(&v));
            assert!(r.below(5) < 5);
        }
        for t in 0..10_000 {
            let v = noise_at(3, t);
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn noise_is_positional() {
        let a = noise_range(9, 0, 100);
        let b = noise_range(9, 40, 20);
        assert_eq!(&a[40..60], &b[..]);
        assert_ne!(noise_range(10, 0, 10), a[..10].to_vec());
    }
}
