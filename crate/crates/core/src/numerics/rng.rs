use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded ChaCha20 generator with an explicit stream index.
///
/// ChaCha20 is counter-based: `(seed, stream)` fully determines the output
/// sequence on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha20Rng,
    seed: u64,
    stream: u64,
}

pub const ALGORITHM: &str = "chacha20";

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            inner,
            seed,
            stream,
        }
    }

    /// Generator for run `run_index` of a sweep seeded with `base_seed`.
    pub fn for_run(base_seed: u64, run_index: u64) -> Self {
        Rng::new(base_seed, derive_stream(base_seed, run_index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream index for `run_index` under `base_seed`.
pub fn derive_stream(base_seed: u64, run_index: u64) -> u64 {
    mix64(mix64(base_seed) ^ run_index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}
