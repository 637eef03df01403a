//! Fixtures shared by the criterion benches.

use candle_core::DType;
use videdit::repnet::ObservationBatch;
use videdit::scenes::{generate_in_memory, sample_observations, VideoClip};
use videdit::{rng, Config, Result};

/// Desk defaults with the seed pinned.
pub fn desk_config() -> Config {
    Config {
        seed: 7,
        ..Config::default()
    }
}

pub fn clips(cfg: &Config, n: usize) -> Result<Vec<VideoClip>> {
    Ok(generate_in_memory(cfg.seed, n, 1, cfg.data.resolution)?.train)
}

/// One observation set per clip, drawn the way training draws them.
pub fn observation_batch(cfg: &Config, clips: &[VideoClip]) -> Result<ObservationBatch> {
    let mut r = rng::stream(cfg.seed, rng::streams::TRAINING);
    let sets = clips
        .iter()
        .map(|c| sample_observations(c, cfg.data.k_random, &mut r))
        .collect::<Result<Vec<_>>>()?;
    ObservationBatch::from_sets(&sets, DType::F32)
}
