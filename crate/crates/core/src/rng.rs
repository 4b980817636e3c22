//! Seeded randomness.
//!
//! Every draw in the crate goes through [`SeededRng`], a ChaCha8 stream cipher
//! generator (`rand_chacha::ChaCha8Rng`). ChaCha output is specified bit-for-bit
//! and independent of platform or word size, so a seed fixes the whole
//! experiment. Independent sub-streams are derived with [`SeededRng::fork`],
//! which selects a distinct ChaCha stream id under the same key.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A child generator on stream `stream` of this seed. The child does not
    /// depend on how many values the parent has already produced.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
        }
    }

    /// Number of 32-bit words consumed so far on this stream.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for SeededRng {
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

/// `n × d` matrix of i.i.d. standard normal draws, filled row-major.
pub fn gaussian_sample<T: Scalar>(rng: &mut SeededRng, n: usize, d: usize) -> Matrix<T> {
    let data = (0..n * d).map(|_| T::of(rng.standard_normal())).collect();
    Matrix::from_vec(n, d, data).expect("length is n*d by construction")
}
