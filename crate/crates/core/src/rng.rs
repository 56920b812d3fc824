//! Deterministic, splittable random streams.
//!
//! Every stochastic routine in the crate draws from a [`SimRng`]. A stream is
//! a ChaCha8 keystream identified by a root seed and a 64-bit stream id;
//! [`SimRng::fork`] derives child streams by hashing the parent id with a
//! child index, so trajectory `k` of a batch always sees the same numbers no
//! matter how many worker threads run the batch.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng {
            seed,
            stream,
            inner,
        }
    }

    /// Independent child stream. Forking does not advance `self`.
    pub fn fork(&self, index: u64) -> SimRng {
        let child = splitmix64(self.stream ^ splitmix64(index.wrapping_add(1)));
        SimRng::with_stream(self.seed, child)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Poisson variate with mean `lambda`.
    ///
    /// Zero-rate events consume no randomness, which keeps streams aligned
    /// when sparse rate bundles differ only in their zero entries.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        if !(lambda > 0.0) {
            return 0;
        }
        if lambda < 30.0 {
            // sequential-search inversion
            let u = self.uniform();
            let mut k = 0u64;
            let mut p = (-lambda).exp();
            let mut cdf = p;
            while u >= cdf {
                k += 1;
                p *= lambda / k as f64;
                cdf += p;
                if p == 0.0 && cdf < u {
                    // only reachable through rounding in the far tail
                    break;
                }
            }
            k
        } else {
            Poisson::new(lambda)
                .expect("positive finite mean")
                .sample(&mut self.inner) as u64
        }
    }

    /// Draw an item proportionally to nonnegative weights. Returns `None` when
    /// every weight is zero.
    pub fn categorical<T: Copy>(&mut self, items: &[(T, f64)]) -> Option<T> {
        let total: f64 = items.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = self.uniform() * total;
        let mut last = None;
        for &(item, w) in items {
            if w <= 0.0 {
                continue;
            }
            if u < w {
                return Some(item);
            }
            u -= w;
            last = Some(item);
        }
        last
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forks_are_reproducible_and_distinct() {
        let root = SimRng::new(7);
        let mut a = root.fork(3);
        let mut b = root.fork(3);
        let mut c = root.fork(4);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
        assert_ne!(
            root.fork(3).fork(0).next_u64(),
            root.fork(0).fork(3).next_u64()
        );
    }

    #[test]
    fn poisson_mean_and_variance() {
        let mut rng = SimRng::new(11);
        for &lambda in &[0.1, 2.5, 45.0] {
            let n = 50_000;
            let draws: Vec<f64> = (0..n).map(|_| rng.poisson(lambda) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (lambda / n as f64).sqrt();
            assert!(
                (mean - lambda).abs() < 4.0 * se,
                "lambda {lambda}: mean {mean}"
            );
            assert!(
                (var / lambda - 1.0).abs() < 0.05,
                "lambda {lambda}: var {var}"
            );
        }
        assert_eq!(rng.poisson(0.0), 0);
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut rng = SimRng::new(1);
        for _ in 0..100 {
            assert_eq!(rng.categorical(&[(0, 0.0), (1, 2.0), (2, 0.0)]), Some(1));
        }
        assert_eq!(rng.categorical::<u8>(&[(0, 0.0)]), None);
    }
}
