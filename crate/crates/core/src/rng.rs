//! Reproducible random streams.
//!
//! A stream is a ChaCha8 keystream keyed by `seed` with the 64-bit ChaCha
//! stream id set to `stream_id`. Gaussian variates come from Box–Muller
//! pairs, each pair consuming exactly two 64-bit outputs, so the `k`-th
//! variate of a stream is addressable directly. Trajectories use this to
//! resume at any step without carrying generator state.

use std::f64::consts::TAU;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream-id domains, so reference ensembles, bootstrap resampling and
/// trajectory noise never share a keystream.
pub mod domain {
    pub const TRAJECTORY: u64 = 0;
    pub const REFERENCE: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const INSTANCE: u64 = 3;
    pub const AUX: u64 = 4;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Stream `index` inside a domain: the domain occupies the top 16 bits.
    pub fn in_domain(seed: u64, domain: u64, index: u64) -> Self {
        Self::new(seed, (domain << 48) | (index & ((1 << 48) - 1)))
    }

    fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    pub fn gaussian(&self) -> GaussianStream {
        GaussianStream::at(*self, 0)
    }

    pub fn uniform(&self) -> UniformStream {
        UniformStream {
            rng: self.generator(),
        }
    }
}

#[inline]
fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    /// Positions the stream so the next variate is the `index`-th one.
    pub fn at(stream: RngStream, index: u64) -> Self {
        let mut rng = stream.generator();
        // two u64 outputs = four 32-bit words per Box–Muller pair
        rng.set_word_pos(u128::from(index / 2) * 4);
        let mut g = Self { rng, spare: None };
        if index % 2 == 1 {
            g.next();
        }
        g
    }

    fn pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - unit_f64(self.rng.next_u64());
        let u2 = unit_f64(self.rng.next_u64());
        let rad = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        (rad * c, rad * s)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.pair();
        self.spare = Some(b);
        a
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.next();
        }
    }
}

pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.rng.next_u64())
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn next_open(&mut self) -> f64 {
        loop {
            let u = self.next_f64();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform index in `0..n` by rejection (no modulo bias).
    pub fn next_index(&mut self, n: usize) -> usize {
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }
}

/// `count` i.i.d. standard normal variates from the start of `stream`.
pub fn gaussian_increments(stream: RngStream, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; count];
    stream.gaussian().fill(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request() {
        assert!(gaussian_increments(RngStream::new(1, 2), 0).is_empty());
    }

    #[test]
    fn deterministic() {
        let a = gaussian_increments(RngStream::new(42, 7), 1000);
        let b = gaussian_increments(RngStream::new(42, 7), 1000);
        assert_eq!(a, b);
        let c = gaussian_increments(RngStream::new(42, 8), 1000);
        assert_ne!(a, c);
    }

    #[test]
    fn random_access_matches_sequential() {
        let s = RngStream::new(9, 3);
        let all = gaussian_increments(s, 64);
        for start in [0u64, 1, 2, 17, 40, 63] {
            let mut g = GaussianStream::at(s, start);
            for (k, expected) in all.iter().enumerate().skip(start as usize) {
                assert_eq!(g.next(), *expected, "start {start} index {k}");
            }
        }
    }

    #[test]
    fn moments_of_a_million() {
        let n = 1_000_000;
        let z = gaussian_increments(RngStream::new(2024, 0), n);
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        let n = 100_000;
        let count = n as f64;
        let streams: Vec<Vec<f64>> = (0..6)
            .map(|id| gaussian_increments(RngStream::in_domain(5, domain::TRAJECTORY, id), n))
            .collect();
        for a in 0..streams.len() {
            for b in (a + 1)..streams.len() {
                let rho = streams[a].iter().zip(&streams[b]).map(|(x, y)| x * y).sum::<f64>() / count;
                assert!(rho.abs() < 4.0 / count.sqrt(), "streams {a},{b}: {rho}");
            }
        }
    }

    #[test]
    fn uniform_index_in_range() {
        let mut u = RngStream::new(1, 1).uniform();
        let mut hits = [0usize; 5];
        for _ in 0..5000 {
            hits[u.next_index(5)] += 1;
        }
        assert!(hits.iter().all(|&h| h > 850 && h < 1150), "{hits:?}");
    }
}
