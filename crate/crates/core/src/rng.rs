//! Seeded random streams.
//!
//! All randomness comes from ChaCha20 (a counter-based generator). One user
//! seed is split into independent streams by ChaCha's 64-bit stream id, so the
//! draws for data, latent codes, interpolation weights and initialization do
//! not perturb each other. A stream's position is `(seed, stream, word_pos)`,
//! which is what checkpoints store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// What a stream is used for. The discriminant is the ChaCha stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Latent = 2,
    Mixing = 3,
    Init = 4,
    Eval = 5,
    Rademacher = 6,
    Misc = 7,
}

#[derive(Clone, Debug)]
pub struct Stream {
    seed: u64,
    rng: ChaCha20Rng,
}

/// Serializable stream position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    /// Position in 32-bit words; serialized as a decimal string because it is
    /// a 128-bit counter.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

impl PartialEq for Stream {
    fn eq(&self, other: &Self) -> bool {
        self.state() == other.state()
    }
}

impl Stream {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self::with_id(seed, purpose as u64)
    }

    /// A stream with an explicit id, for sub-streams (e.g. one per network).
    pub fn with_id(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    pub fn state(&self) -> StreamState {
        StreamState {
            seed: self.seed,
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore(state: &StreamState) -> Self {
        let mut s = Self::with_id(state.seed, state.stream);
        s.rng.set_word_pos(state.word_pos);
        s
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform())
    }
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
