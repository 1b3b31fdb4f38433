//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the 64-bit seed; substreams
//! select a different ChaCha stream id, so sibling streams never overlap.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// Independent child stream identified by `id`. Depends only on this
    /// stream's identity, not on how many numbers have been drawn from it.
    pub fn substream(&self, id: u64) -> Rng {
        let stream = splitmix64(self.stream ^ splitmix64(id.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self::with_stream(self.seed, stream)
    }

    /// Stream addressed by a path of ids below the root stream of `seed`.
    pub fn derive(seed: u64, path: &[u64]) -> Rng {
        path.iter().fold(Rng::new(seed), |r, id| r.substream(*id))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Exponential with unit rate.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    pub fn fill_uniform(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.uniform();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let xs: Vec<f64> = (0..100).map(|_| a.normal()).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.normal()).collect();
        assert_eq!(xs, ys);
        let mut c = Rng::derive(7, &[3, 4]);
        let mut d = Rng::new(7).substream(3).substream(4);
        assert_eq!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn substream_ignores_parent_position() {
        let mut a = Rng::new(1);
        let before = a.substream(9).next_u64();
        a.uniform();
        assert_eq!(before, a.substream(9).next_u64());
        assert_ne!(before, a.substream(10).next_u64());
    }

    /// Chi-square statistic over 20 equiprobable bins; the 0.99 quantile of
    /// chi-square with 19 degrees of freedom is 36.19.
    fn chi_square_uniform(rng: &mut Rng, draws: usize) -> f64 {
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for _ in 0..draws {
            counts[(rng.uniform() * bins as f64) as usize] += 1;
        }
        let expected = draws as f64 / bins as f64;
        counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
    }

    #[test]
    fn substreams_pass_uniformity() {
        let root = Rng::new(2024);
        for id in 0..5 {
            let stat = chi_square_uniform(&mut root.substream(id), 100_000);
            assert!(stat < 36.19, "substream {id}: chi2 = {stat}");
        }
    }

    #[test]
    fn interleaved_substreams_are_uncorrelated() {
        let root = Rng::new(5);
        let mut a = root.substream(0);
        let mut b = root.substream(1);
        let n = 100_000;
        let mut s = 0.0;
        for _ in 0..n {
            s += (a.uniform() - 0.5) * (b.uniform() - 0.5);
        }
        // correlation standard error is 1/sqrt(n); variance of each is 1/12
        let corr = s / n as f64 * 12.0;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "{corr}");
    }
}
