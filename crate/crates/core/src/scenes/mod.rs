//! Procedural moving-shapes videos with factor labels and templated text.

mod dataset;
mod describe;
mod frame;
mod render;

pub use dataset::{generate_dataset, generate_in_memory, load_dataset, read_manifest, Dataset, ManifestRecord, Split};
pub use describe::{describe, parse_attributes, tokenize, Attributes, SIZE_WORDS};
pub use frame::{tile, Frame};
pub use render::{object_mask, render_frame, Palette, COLOR_WORDS, SHAPE_WORDS};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FRAMES_PER_CLIP: usize = 15;
pub const N_COLORS: usize = 10;
pub const N_SCALES: usize = 6;
pub const N_SHAPES: usize = 4;
pub const N_ORIENTATIONS: usize = 15;

/// Static generative factors of one clip. Orientation is the dynamic
/// factor and equals the frame index (one step per frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorSpec {
    pub floor_color: u8,
    pub wall_color: u8,
    pub object_color: u8,
    pub scale: u8,
    pub shape: u8,
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: u8, n: usize| {
            if (v as usize) < n {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} index {v} out of range 0..{n}")))
            }
        };
        check("floor_color", self.floor_color, N_COLORS)?;
        check("wall_color", self.wall_color, N_COLORS)?;
        check("object_color", self.object_color, N_COLORS)?;
        check("scale", self.scale, N_SCALES)?;
        check("shape", self.shape, N_SHAPES)
    }

    /// small / medium / big: scale indices {0,1}, {2,3}, {4,5}.
    pub fn size_group(&self) -> usize {
        self.scale as usize / 2
    }

    /// Dense index over all static combinations.
    pub fn combination_index(&self) -> usize {
        let mut i = self.floor_color as usize;
        i = i * N_COLORS + self.wall_color as usize;
        i = i * N_COLORS + self.object_color as usize;
        i = i * N_SCALES + self.scale as usize;
        i * N_SHAPES + self.shape as usize
    }

    pub fn from_combination_index(mut i: usize) -> Self {
        let shape = (i % N_SHAPES) as u8;
        i /= N_SHAPES;
        let scale = (i % N_SCALES) as u8;
        i /= N_SCALES;
        let object_color = (i % N_COLORS) as u8;
        i /= N_COLORS;
        let wall_color = (i % N_COLORS) as u8;
        i /= N_COLORS;
        Self {
            floor_color: i as u8,
            wall_color,
            object_color,
            scale,
            shape,
        }
    }

    pub const N_COMBINATIONS: usize = N_COLORS * N_COLORS * N_COLORS * N_SCALES * N_SHAPES;

    /// All six factor values at a given frame, orientation last.
    pub fn factor_row(&self, frame_index: usize) -> [usize; 6] {
        [
            self.floor_color as usize,
            self.wall_color as usize,
            self.object_color as usize,
            self.scale as usize,
            self.shape as usize,
            frame_index,
        ]
    }
}

pub const FACTOR_NAMES: [&str; 6] = ["floor_color", "wall_color", "object_color", "scale", "shape", "orientation"];

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub frames: Vec<Frame>,
    pub timestamps: Vec<f64>,
    pub factors: FactorSpec,
    pub descriptions: Vec<String>,
}

impl VideoClip {
    pub fn render(clip_id: impl Into<String>, factors: FactorSpec, resolution: usize) -> Result<Self> {
        let frames = (0..FRAMES_PER_CLIP)
            .map(|i| render_frame(&factors, i, resolution))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clip_id: clip_id.into(),
            frames,
            timestamps: normalized_timestamps(FRAMES_PER_CLIP),
            factors,
            descriptions: describe(&factors),
        })
    }

    /// The same clip with every frame box-filtered down by `factor`.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            frames: self.frames.iter().map(|f| f.downsampled(factor)).collect::<Result<_>>()?,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.frames.first().map(|f| f.size).unwrap_or(0)
    }

    /// The full clip as an observation set (every frame).
    pub fn all_observations(&self) -> ObservationSet {
        ObservationSet {
            frames: self.frames.clone(),
            times: self.timestamps.clone(),
            indices: (0..self.len()).collect(),
            source_clip_id: self.clip_id.clone(),
        }
    }
}

/// `i / (n - 1)` for `i in 0..n`.
pub fn normalized_timestamps(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Frames observed at a strictly increasing subset of a clip's times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub frames: Vec<Frame>,
    pub times: Vec<f64>,
    /// Frame indices into the source clip.
    pub indices: Vec<usize>,
    pub source_clip_id: String,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// First frame plus `k_random` distinct later frames, in time order.
pub fn sample_observations<R: Rng>(clip: &VideoClip, k_random: usize, rng: &mut R) -> Result<ObservationSet> {
    let n = clip.len();
    if n == 0 || 1 + k_random > n {
        return Err(Error::validation(format!(
            "cannot draw 1 + {k_random} frames from a clip of {n}"
        )));
    }
    let mut indices: Vec<usize> = index::sample(rng, n - 1, k_random).into_iter().map(|i| i + 1).collect();
    indices.sort_unstable();
    indices.insert(0, 0);
    Ok(ObservationSet {
        frames: indices.iter().map(|&i| clip.frames[i].clone()).collect(),
        times: indices.iter().map(|&i| clip.timestamps[i]).collect(),
        indices,
        source_clip_id: clip.clip_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn clip() -> VideoClip {
        let f = FactorSpec {
            floor_color: 1,
            wall_color: 2,
            object_color: 7,
            scale: 5,
            shape: 3,
        };
        VideoClip::render("c", f, 32).unwrap()
    }

    #[test]
    fn combination_index_round_trip() {
        for i in [0, 1, 17, 999, FactorSpec::N_COMBINATIONS - 1] {
            let f = FactorSpec::from_combination_index(i);
            f.validate().unwrap();
            assert_eq!(f.combination_index(), i);
        }
    }

    #[test]
    fn downsampling_preserves_means() {
        let c = clip();
        let small = c.downsampled(2).unwrap();
        assert_eq!(small.resolution(), c.resolution() / 2);
        for (a, b) in c.frames.iter().zip(&small.frames) {
            let ma: f32 = a.data.iter().sum::<f32>() / a.data.len() as f32;
            let mb: f32 = b.data.iter().sum::<f32>() / b.data.len() as f32;
            assert!((ma - mb).abs() < 1e-5);
        }
        assert!(c.downsampled(3).is_err());
    }

    #[test]
    fn timestamps_normalized() {
        let t = normalized_timestamps(FRAMES_PER_CLIP);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[14], 1.0);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sampling_k0_is_first_frame() {
        let c = clip();
        let obs = sample_observations(&c, 0, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(obs.indices, vec![0]);
        assert_eq!(obs.times, vec![0.0]);
    }

    #[test]
    fn sampling_k3() {
        let c = clip();
        let mut r = rng::stream(1, 0);
        for _ in 0..50 {
            let obs = sample_observations(&c, 3, &mut r).unwrap();
            assert_eq!(obs.len(), 4);
            assert_eq!(obs.times[0], 0.0);
            assert!(obs.times.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn sampling_too_many() {
        let c = clip();
        assert!(sample_observations(&c, 15, &mut rng::stream(1, 0)).is_err());
        assert!(sample_observations(&c, 14, &mut rng::stream(1, 0)).is_ok());
    }

    #[test]
    fn sampling_frequencies_match_hypergeometric() {
        // Each of the 14 later frames is included with probability 3/14.
        let c = clip();
        let mut r = rng::stream(2, 0);
        let draws = 10_000;
        let mut counts = [0usize; FRAMES_PER_CLIP];
        for _ in 0..draws {
            for i in sample_observations(&c, 3, &mut r).unwrap().indices {
                counts[i] += 1;
            }
        }
        assert_eq!(counts[0], draws);
        for &k in &counts[1..] {
            let freq = k as f64 / draws as f64;
            assert!((freq - 3.0 / 14.0).abs() < 0.02, "frequency {freq}");
        }
    }
}
