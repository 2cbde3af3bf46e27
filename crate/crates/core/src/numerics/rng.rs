use rand::distr::{Distribution, Open01};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Counter-based random stream.
///
/// The state is fully described by `(seed, counter)`, where `counter` is the
/// ChaCha word position. Child streams are derived from the parent seed and a
/// label, so workers can split without coordinating.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha12Rng,
}

/// Serializable snapshot of an [`RngStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub counter: u128,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha12Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn state(&self) -> RngState {
        RngState { seed: self.seed, counter: self.counter() }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut s = Self::new(state.seed);
        s.inner.set_word_pos(state.counter);
        s
    }

    /// Independent child stream keyed by `label`. Does not advance `self`.
    pub fn split(&self, label: &str) -> RngStream {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        RngStream::new(u64::from_le_bytes(b))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Standard Gumbel draw `-ln(-ln u)`.
    pub fn gumbel(&mut self) -> f64 {
        -(-self.uniform().ln()).ln()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; bias is negligible for the sizes used here.
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn uniforms(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }
}

impl RngCore for RngStream {
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
