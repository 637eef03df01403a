//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from
//! `(seed, stream id)`, so adding a new consumer never perturbs existing
//! ones and per-clip streams can be drawn in any order.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Well-known stream ids.
pub mod streams {
    pub const DATASET_SPLIT: u64 = 1;
    pub const REPNET_INIT: u64 = 10;
    pub const TRANET_INIT: u64 = 11;
    pub const DISC_INIT: u64 = 12;
    pub const PERCEPTUAL_INIT: u64 = 13;
    pub const EMBEDDER_INIT: u64 = 14;
    pub const TRAINING: u64 = 20;
    pub const EVALUATION: u64 = 21;
    /// Base for per-epoch shuffles: `EPOCH_BASE + epoch`.
    pub const EPOCH_BASE: u64 = 1 << 40;
    /// Base for per-clip streams: `CLIP_BASE + clip index`.
    pub const CLIP_BASE: u64 = 1 << 32;
}

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn normal_tensor<R: Rng>(rng: &mut R, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n = shape.iter().product();
    Ok(Tensor::from_vec(normal_vec(rng, n), shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Exact position of a ChaCha stream, for checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
