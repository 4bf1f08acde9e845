//! Deterministic random-number streams.
//!
//! A stream is addressed by `(seed, stream id)`; the same address always
//! yields the same draw sequence. Streams with different ids are
//! statistically independent, which is how samplers, batch grids and
//! training loops get reproducible yet uncorrelated randomness from one
//! master seed.
//!
//! All draws are made in `f64` regardless of the consumer's scalar type,
//! so f32 and f64 runs see the same underlying sequence.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::num::{real, Real};
use crate::vec3::Vec3;

/// A seeded, stream-addressed RNG. Single consumer; not for sharing
/// across concurrent callers.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream under the same seed. Callers allocate ids so that
    /// distinct consumers never share one.
    pub fn derive(&self, stream: u64) -> Self {
        RngStream::new(self.seed, stream)
    }

    /// Standard normal draw.
    pub fn normal<T: Real>(&mut self) -> T {
        let v: f64 = StandardNormal.sample(&mut self.rng);
        real(v)
    }

    /// Isotropic standard normal 3-vector.
    pub fn normal3<T: Real>(&mut self) -> Vec3<T> {
        Vec3([self.normal(), self.normal(), self.normal()])
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform01<T: Real>(&mut self) -> T {
        let v: f64 = rand::Rng::random(&mut self.rng);
        real(v)
    }

    /// Beta(alpha, beta) draw. Panics on non-positive shape parameters;
    /// validity is checked by the callers that own the distribution config.
    pub fn beta<T: Real>(&mut self, alpha: f64, beta: f64) -> T {
        let d = Beta::new(alpha, beta).expect("Beta shape parameters must be positive");
        let v: f64 = d.sample(&mut self.rng);
        real(v)
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        let v: f64 = rand::Rng::random(&mut self.rng);
        v < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
