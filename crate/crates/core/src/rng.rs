//! Deterministic pseudo-random numbers (xoshiro256++).
//!
//! A self-contained generator keeps runs bit-reproducible across platforms
//! and crate versions, which the trainer and evaluator rely on.

use alloc::vec::Vec;

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
}

fn splitmix64(seed: &mut u64) -> u64 {
    *seed = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *seed;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut s = seed;
        Rng {
            state: [
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
            ],
        }
    }

    /// Derive an independent child generator. Used to give subsystems
    /// (init, rollouts, evaluation) their own streams off one run seed.
    pub fn fork(&mut self) -> Rng {
        Rng::seed_from_u64(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). n must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // 128-bit multiply-shift; bias is negligible for the ranges used here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Uniform in (-limit, limit).
    pub fn uniform_in<R: Real>(&mut self, limit: f64) -> R {
        R::from_f64((self.uniform() * 2.0 - 1.0) * limit)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Sample an index from an unnormalized weight vector by CDF walk.
    /// Weights must be nonnegative with a positive sum.
    pub fn pick_weighted<R: Real>(&mut self, weights: &[R]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().map(|w| w.to_f64()).sum();
        debug_assert!(total > 0.0, "pick_weighted needs positive mass");
        let mut target = self.uniform() * total;
        let mut last_positive = 0;
        for (i, w) in weights.iter().enumerate() {
            let w = w.to_f64();
            if w > 0.0 {
                last_positive = i;
                if target < w {
                    return i;
                }
                target -= w;
            }
        }
        // Rounding slack lands on the last entry with positive mass.
        last_positive
    }

    /// n draws without replacement from 0..pool.
    pub fn sample_indices(&mut self, pool: usize, n: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..pool).collect();
        self.shuffle(&mut ids);
        ids.truncate(n.min(pool));
        ids
    }
}
