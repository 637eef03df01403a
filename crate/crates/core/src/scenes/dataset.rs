use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{normalized_timestamps, FactorSpec, Frame, Palette, VideoClip, FRAMES_PER_CLIP};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFactors {
    pub floor_color: u8,
    pub wall_color: u8,
    pub object_color: u8,
    pub scale: u8,
    pub shape: u8,
    pub orientation: Vec<usize>,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub split: Split,
    pub timestamps: Vec<f64>,
    pub factors: ManifestFactors,
    pub descriptions: Vec<String>,
}

impl ManifestRecord {
    fn from_clip(clip: &VideoClip, split: Split) -> Self {
        let f = clip.factors;
        Self {
            clip_id: clip.clip_id.clone(),
            split,
            timestamps: clip.timestamps.clone(),
            factors: ManifestFactors {
                floor_color: f.floor_color,
                wall_color: f.wall_color,
                object_color: f.object_color,
                scale: f.scale,
                shape: f.shape,
                orientation: (0..clip.len()).collect(),
            },
            descriptions: clip.descriptions.clone(),
        }
    }

    pub fn factor_spec(&self) -> FactorSpec {
        FactorSpec {
            floor_color: self.factors.floor_color,
            wall_color: self.factors.wall_color,
            object_color: self.factors.object_color,
            scale: self.factors.scale,
            shape: self.factors.shape,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<VideoClip>,
    pub test: Vec<VideoClip>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[VideoClip] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn find(&self, clip_id: &str) -> Option<&VideoClip> {
        self.train.iter().chain(&self.test).find(|c| c.clip_id == clip_id)
    }
}

/// Static factor combinations for each split; test first, then train.
fn split_combinations(seed: u64, n_train: usize, n_test: usize) -> Result<(Vec<FactorSpec>, Vec<FactorSpec>)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::validation("n_train and n_test must be >= 1"));
    }
    if n_train + n_test > FactorSpec::N_COMBINATIONS {
        return Err(Error::validation(format!(
            "at most {} clips fit in disjoint static factor combinations",
            FactorSpec::N_COMBINATIONS
        )));
    }
    let mut combos: Vec<usize> = (0..FactorSpec::N_COMBINATIONS).collect();
    combos.shuffle(&mut rng::stream(seed, streams::DATASET_SPLIT));
    let test = combos[..n_test].iter().map(|&i| FactorSpec::from_combination_index(i)).collect();
    let train = combos[n_test..n_test + n_train]
        .iter()
        .map(|&i| FactorSpec::from_combination_index(i))
        .collect();
    Ok((train, test))
}

fn clip_id(split: Split, index: usize) -> String {
    match split {
        Split::Train => format!("train_{index:05}"),
        Split::Test => format!("test_{index:05}"),
    }
}

pub fn generate_in_memory(seed: u64, n_train: usize, n_test: usize, resolution: usize) -> Result<Dataset> {
    let (train, test) = split_combinations(seed, n_train, n_test)?;
    let render = |split: Split, specs: Vec<FactorSpec>| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, f)| VideoClip::render(clip_id(split, i), f, resolution))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Dataset {
        train: render(Split::Train, train)?,
        test: render(Split::Test, test)?,
    })
}

/// Renders the dataset to `out_dir` and returns its manifest.
pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
    resolution: usize,
    out_dir: &Path,
    overwrite: bool,
) -> Result<Vec<ManifestRecord>> {
    let manifest_path = out_dir.join("manifest.jsonl");
    if manifest_path.exists() {
        if !overwrite {
            return Err(Error::validation(format!(
                "{} already holds a dataset (pass overwrite to replace it)",
                out_dir.display()
            )));
        }
        let clips = out_dir.join("clips");
        if clips.exists() {
            fs::remove_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
        }
    }
    let data = generate_in_memory(seed, n_train, n_test, resolution)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut records = Vec::with_capacity(n_train + n_test);
    for (split, clips) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        for clip in clips {
            let dir = out_dir.join("clips").join(&clip.clip_id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (i, frame) in clip.frames.iter().enumerate() {
                frame.save_png(&dir.join(format!("frame_{i:04}.png")))?;
            }
            records.push(ManifestRecord::from_clip(clip, split));
        }
    }

    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut w = BufWriter::new(file);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(&manifest_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;

    let palette_path = out_dir.join("palette.json");
    let palette = serde_json::to_string_pretty(&Palette::default())?;
    fs::write(&palette_path, palette).map_err(|e| Error::io(&palette_path, e))?;
    Ok(records)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let path = root.join("manifest.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
        .map(|line| {
            let line = line.map_err(|e| Error::io(&path, e))?;
            Ok(serde_json::from_str(&line)?)
        })
        .collect()
}

/// Loads every clip listed in `<root>/manifest.jsonl`.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut data = Dataset::default();
    for rec in read_manifest(root)? {
        let factors = rec.factor_spec();
        factors.validate()?;
        let n = rec.timestamps.len();
        if n != FRAMES_PER_CLIP || rec.timestamps != normalized_timestamps(n) {
            return Err(Error::validation(format!("clip {} has malformed timestamps", rec.clip_id)));
        }
        let dir = root.join("clips").join(&rec.clip_id);
        let frames = (0..n)
            .map(|i| Frame::load_png(&dir.join(format!("frame_{i:04}.png"))))
            .collect::<Result<Vec<_>>>()?;
        let clip = VideoClip {
            clip_id: rec.clip_id,
            frames,
            timestamps: rec.timestamps,
            factors,
            descriptions: rec.descriptions,
        };
        match rec.split {
            Split::Train => data.train.push(clip),
            Split::Test => data.test.push(clip),
        }
    }
    Ok(data)
}
