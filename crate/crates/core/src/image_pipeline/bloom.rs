//! Bit-array membership sketch used to skip URLs that were already fetched.

use xxhash_rust::xxh3::xxh3_64_with_seed;

const SEED_A: u64 = 0;
const SEED_B: u64 = 0x51_7CC1_B727_220A;

/// `(1 - e^(-k n / m))^k`.
pub fn theoretical_fpr(n: usize, m: usize, k: u32) -> f64 {
    (1.0 - (-(k as f64) * n as f64 / m as f64).exp()).powi(k as i32)
}

/// Index `i` is `(h1 + i * h2) mod m` with `h2` forced odd, both halves from
/// xxh3 under fixed seeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    m: usize,
    k: u32,
    n: usize,
}

impl BloomFilter {
    /// # Panics
    /// If `m` or `k` is zero.
    pub fn new(m: usize, k: u32) -> Self {
        assert!(m > 0 && k > 0, "bloom filter needs m > 0 and k > 0");
        Self { words: vec![0; m.div_ceil(64)], m, k, n: 0 }
    }

    /// Sized for `expected` insertions at the target false-positive rate.
    pub fn with_rate(expected: usize, fpr: f64) -> Self {
        let n = expected.max(1) as f64;
        let ln2 = std::f64::consts::LN_2;
        let m = (-(n * fpr.clamp(1e-12, 0.5).ln()) / (ln2 * ln2)).ceil() as usize;
        let k = ((m as f64 / n) * ln2).round().max(1.0) as u32;
        Self::new(m.max(64), k)
    }

    pub fn bits(&self) -> usize {
        self.m
    }

    pub fn hashes(&self) -> u32 {
        self.k
    }

    /// Insertions so far, counting repeats.
    pub fn inserted(&self) -> usize {
        self.n
    }

    fn indices(&self, item: &[u8]) -> impl Iterator<Item = usize> {
        let h1 = xxh3_64_with_seed(item, SEED_A);
        let h2 = xxh3_64_with_seed(item, SEED_B) | 1;
        let m = self.m as u64;
        (0..self.k as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
    }

    /// Returns whether the item was possibly present before the insert.
    pub fn insert(&mut self, item: &str) -> bool {
        let mut present = true;
        let idx: Vec<usize> = self.indices(item.as_bytes()).collect();
        for i in idx {
            let (w, b) = (i / 64, i % 64);
            present &= self.words[w] >> b & 1 == 1;
            self.words[w] |= 1 << b;
        }
        self.n += 1;
        present
    }

    /// `false` means definitely absent.
    pub fn contains(&self, item: &str) -> bool {
        self.indices(item.as_bytes()).all(|i| self.words[i / 64] >> (i % 64) & 1 == 1)
    }

    pub fn theoretical_fpr(&self) -> f64 {
        theoretical_fpr(self.n, self.m, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_value() {
        assert!((theoretical_fpr(1000, 9585, 7) - 0.0100).abs() < 5e-4);
    }

    #[test]
    fn fresh_and_inserted() {
        let mut b = BloomFilter::new(1024, 3);
        assert!(!b.contains("u"));
        assert!(!b.insert("u"));
        assert!(b.contains("u"));
        assert!(b.insert("u"));
        assert_eq!(b.inserted(), 2);
    }

    #[test]
    fn sizing() {
        let b = BloomFilter::with_rate(1000, 0.01);
        assert_eq!((b.bits(), b.hashes()), (9586, 7));
    }
}
