//! Deterministic pseudo-randomness.
//!
//! Every random draw in the engine comes from an [`RngStream`] keyed by
//! (seed, purpose, round, client). Streams are independent, so clients can
//! train in any order or in parallel and still produce bit-identical runs.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// What a stream is consumed for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    DataGen = 1,
    Proxy = 2,
    Partition = 3,
    ModelInit = 4,
    LocalTrain = 5,
    ServerDistill = 6,
    GeneratorTrain = 7,
    FineTune = 8,
    Bootstrap = 9,
    GenProbe = 10,
}

/// A counter-based deterministic random stream.
///
/// Identical (seed, stream id) pairs produce identical draw sequences on
/// every platform.
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    /// Stream keyed by purpose, round and client; the keys pack injectively
    /// into the 64-bit stream id (rounds and clients below 2^24).
    pub fn for_purpose(seed: u64, purpose: StreamPurpose, round: usize, client: usize) -> Self {
        let stream = ((purpose as u64) << 48)
            | (((round as u64) & 0xff_ffff) << 24)
            | ((client as u64) & 0xff_ffff);
        RngStream::new(seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Gamma(shape, 1) draw; shape must be positive.
    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let g = Gamma::new(shape, 1.0)
            .map_err(|e| Error::invalid(format!("gamma shape {shape}: {e}")))?;
        Ok(g.sample(&mut self.rng))
    }

    pub fn range(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index draw from an unnormalized nonnegative weight vector.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }

    /// Tensor with i.i.d. N(0, scale^2) entries.
    pub fn normal_tensor(&mut self, shape: Vec<usize>, scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.normal() * scale).collect();
        Tensor::new(shape, data).expect("shape/data computed together")
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

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
