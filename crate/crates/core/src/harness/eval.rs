//! Post-training evaluation: editing diagnostics, disentanglement and
//! distribution metrics, trajectory linearity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::Networks;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::metrics::{
    aam, code_factor_table, dyn_trajectory_report, frechet_distance, inception_score, mig, mp_score, text_image_similarity, AamMode,
    AttributeProbe, FrameEmbedder, MetricsReport, RandomFrameEmbedder, RandomVideoEmbedder, VideoEmbedder, DEFAULT_BINS,
};
use crate::adversary::derangement;
use crate::rng::{self, streams};
use crate::scenes::{Frame, VideoClip, FACTOR_NAMES};
use crate::textenc::{TemplateEncoder, TextEncoder};
use crate::tranet::manipulate_clip;

/// Outcome of editing one clip towards a foreign description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub clip_id: String,
    pub target_text: String,
    pub mp: f64,
    pub similarity_edited: f64,
    pub similarity_unedited: f64,
}

impl EditRecord {
    pub fn improved(&self) -> bool {
        self.similarity_edited > self.similarity_unedited
    }
}

/// Edited frames with their records, in clip order.
pub struct EditRun {
    pub records: Vec<EditRecord>,
    pub edited: Vec<Vec<Frame>>,
}

impl EditRun {
    /// Fraction of clips whose edit moved them towards the target text.
    pub fn improved_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.improved()).count() as f64 / self.records.len() as f64
    }

    pub fn mean_mp(&self) -> f64 {
        self.records.iter().map(|r| r.mp).sum::<f64>() / self.records.len().max(1) as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Edits every clip towards the canonical description of another clip
/// (a derangement over `clips`) and scores it with the attribute probe in
/// the template text space.
pub fn edit_clips(cfg: &Config, nets: &Networks, clips: &[VideoClip], text: &dyn TextEncoder) -> Result<EditRun> {
    let mut r = rng::stream(cfg.seed, streams::EVALUATION);
    let perm = derangement(clips.len(), &mut r).ok_or_else(|| Error::validation("editing needs at least 2 clips"))?;
    let probe = AttributeProbe::new(cfg.text.seed)?;
    let template = TemplateEncoder::new(cfg.text.seed);
    let dtype = cfg.dtype.dtype();
    let mut records = Vec::with_capacity(clips.len());
    let mut edited = Vec::with_capacity(clips.len());
    for (clip, &j) in clips.iter().zip(&perm) {
        let target_text = clips[j].descriptions[0].clone();
        let y = manipulate_clip(
            clip,
            &target_text,
            text,
            &nets.repnet,
            &nets.tranet,
            cfg.data.k_random,
            &cfg.ode,
            dtype,
            &mut r,
        )?;
        let w = template.encode(&target_text)?;
        let mp = mp_score(&y, &clip.frames, &w, &probe)?;
        let unedited = text_image_similarity(&clip.frames, &w, &probe)?;
        records.push(EditRecord {
            clip_id: clip.clip_id.clone(),
            target_text,
            mp: mp.score,
            similarity_edited: mean(&mp.similarity),
            similarity_unedited: mean(&unedited),
        });
        edited.push(y);
    }
    Ok(EditRun { records, edited })
}

/// Full metrics report on `clips` (typically the test split).
pub fn metrics_report(cfg: &Config, nets: &Networks, clips: &[VideoClip], text: &dyn TextEncoder, codes_dir: Option<&Path>) -> Result<MetricsReport> {
    let table = code_factor_table(&nets.repnet, clips, &cfg.ode, cfg.dtype.dtype())?;
    if let Some(dir) = codes_dir {
        table.write_csv(dir, &FACTOR_NAMES)?;
    }
    let run = edit_clips(cfg, nets, clips, text)?;

    let real_frames: Vec<Frame> = clips.iter().flat_map(|c| c.frames.iter().cloned()).collect();
    let fake_frames: Vec<Frame> = run.edited.iter().flatten().cloned().collect();
    let fe = RandomFrameEmbedder::new(cfg.seed)?;
    let frechet_frame = frechet_distance(&fe.embed(&real_frames)?, &fe.embed(&fake_frames)?)?;
    let ve = RandomVideoEmbedder::new(cfg.seed)?;
    let real_v = clips.iter().map(|c| ve.embed_clip(&c.frames)).collect::<Result<Vec<_>>>()?;
    let fake_v = run.edited.iter().map(|f| ve.embed_clip(f)).collect::<Result<Vec<_>>>()?;
    let frechet_video = frechet_distance(&real_v, &fake_v)?;
    let probe = AttributeProbe::new(cfg.text.seed)?;
    let is = inception_score(&probe.classify(&fake_frames).expect("probe classifies")?)?;

    Ok(MetricsReport {
        mig: mig(&table, DEFAULT_BINS)?,
        aam: aam(&table, DEFAULT_BINS, AamMode::SumOthers)?,
        mp: run.mean_mp(),
        frechet_frame,
        frechet_video,
        is,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        n_samples: table.n_samples(),
    })
}

/// MIG and AAM of the RepNet codes alone.
pub fn disentanglement(cfg: &Config, nets: &Networks, clips: &[VideoClip]) -> Result<(f64, f64)> {
    let table = code_factor_table(&nets.repnet, clips, &cfg.ode, cfg.dtype.dtype())?;
    Ok((mig(&table, DEFAULT_BINS)?, aam(&table, DEFAULT_BINS, AamMode::SumOthers)?))
}

/// Dominant-dimension linear-fit R² of each clip's dense z_dyn roll-out.
pub fn trajectory_r2(cfg: &Config, nets: &Networks, clips: &[VideoClip], dense: usize) -> Result<Vec<f64>> {
    let times: Vec<f64> = (0..dense).map(|i| i as f64 / (dense - 1).max(1) as f64).collect();
    clips
        .iter()
        .map(|c| Ok(dyn_trajectory_report(&nets.repnet, c, &times, &cfg.ode, cfg.dtype.dtype())?.dominant_r2))
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}
