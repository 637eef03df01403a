//! Scores and reports that need the trained networks: manipulative
//! precision, code tables for MIG/AAM, latent traversals and dynamic
//! trajectories.

use std::path::Path;

use candle_core::{DType, Tensor};
use image::{Rgb, RgbImage};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::embed::TextAlignedEmbedder;
use super::info::CodeFactorTable;
use crate::config::OdeConfig;
use crate::error::{Error, Result};
use crate::nn::to_f64_vec;
use crate::repnet::{Draw, ObservationBatch, RepNet};
use crate::scenes::{Frame, VideoClip};
use crate::textenc::TextEmbedding;

/// Per-frame manipulative precision and its parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpScore {
    pub per_frame: Vec<f64>,
    pub similarity: Vec<f64>,
    pub mean_abs_change: Vec<f64>,
    pub score: f64,
}

/// `(1 - mean|y - x|) · sim`.
pub fn mp_value(mean_abs_change: f64, similarity: f64) -> f64 {
    (1.0 - mean_abs_change) * similarity
}

/// Cosine similarity of each frame to `text`.
pub fn text_image_similarity(frames: &[Frame], text: &TextEmbedding, embedder: &dyn TextAlignedEmbedder) -> Result<Vec<f64>> {
    frames.iter().map(|f| Ok(embedder.embed_image(f)?.cosine(text))).collect()
}

/// MP of an edited clip `y` against its source `x`, averaged over frames.
pub fn mp_score(y: &[Frame], x: &[Frame], text: &TextEmbedding, embedder: &dyn TextAlignedEmbedder) -> Result<MpScore> {
    if y.is_empty() || y.len() != x.len() {
        return Err(Error::validation("edited and source clips must be non-empty and equally long"));
    }
    let similarity = text_image_similarity(y, text, embedder)?;
    let mut mean_abs_change = Vec::with_capacity(y.len());
    for (a, b) in y.iter().zip(x) {
        if a.size != b.size {
            return Err(Error::validation("edited and source frames differ in size"));
        }
        mean_abs_change.push(a.mean_abs_diff(b));
    }
    let per_frame: Vec<f64> = mean_abs_change.iter().zip(&similarity).map(|(d, s)| mp_value(*d, *s)).collect();
    let score = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(MpScore {
        per_frame,
        similarity,
        mean_abs_change,
        score,
    })
}

fn clip_batch(clip: &VideoClip, dtype: DType) -> Result<ObservationBatch> {
    ObservationBatch::from_sets(&[clip.all_observations()], dtype)
}

fn rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let d = t.dim(t.rank() - 1)?;
    let flat = to_f64_vec(t)?;
    Ok(flat.chunks(d).map(<[f64]>::to_vec).collect())
}

/// Per-frame posterior-mean codes `[z_tr, z_ti, z_dyn(t)]` against the six
/// ground-truth factors.
pub fn code_factor_table(repnet: &RepNet, clips: &[VideoClip], ode: &OdeConfig, dtype: DType) -> Result<CodeFactorTable> {
    let mut codes = Vec::new();
    let mut factors = Vec::new();
    for clip in clips {
        let code = repnet.encode_clip::<ChaCha8Rng>(&clip_batch(clip, dtype)?, Draw::Mean, ode)?;
        codes.extend(rows(&code.frame_latents(false)?)?);
        factors.extend((0..clip.len()).map(|i| clip.factors.factor_row(i).to_vec()));
    }
    CodeFactorTable::new(codes, factors)
}

/// Decodes frame `frame` of `clip` with latent `dim` overwritten by each of
/// `values`. One row per dim.
pub fn traversal_grid(
    repnet: &RepNet,
    clip: &VideoClip,
    dims: &[usize],
    values: &[f64],
    frame: usize,
    ode: &OdeConfig,
    dtype: DType,
) -> Result<Vec<Vec<Frame>>> {
    let code = repnet.encode_clip::<ChaCha8Rng>(&clip_batch(clip, dtype)?, Draw::Mean, ode)?;
    let z = code.frame_latents(false)?;
    let (_, k, d) = z.dims3()?;
    if frame >= k {
        return Err(Error::validation(format!("frame {frame} out of range 0..{k}")));
    }
    let base = rows(&z)?.swap_remove(frame);
    let mut grid = Vec::with_capacity(dims.len());
    for &dim in dims {
        if dim >= d {
            return Err(Error::validation(format!("latent dim {dim} out of range 0..{d}")));
        }
        let mut batch = Vec::with_capacity(values.len() * d);
        for &v in values {
            let mut row = base.clone();
            row[dim] = v;
            batch.extend(row);
        }
        let zt = Tensor::from_vec(batch, (values.len(), d), &candle_core::Device::Cpu)?.to_dtype(dtype)?;
        grid.push(Frame::from_batch_tensor(&repnet.decode(&zt)?)?);
    }
    Ok(grid)
}

/// Dense roll-out of a clip's dynamic latent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryReport {
    pub times: Vec<f64>,
    /// `[time][dim]`.
    pub raw: Vec<Vec<f64>>,
    /// Each dim rescaled to `[-1, 1]` over the roll-out.
    pub normalized: Vec<Vec<f64>>,
    /// Ground-truth orientation index at each time.
    pub orientation: Vec<f64>,
    /// Linear-fit R² per dim over the final 80% of the interval.
    pub r2: Vec<f64>,
    /// R² of the dim with the largest range.
    pub dominant_r2: f64,
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
/// A constant `y` is perfectly fitted.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if syy <= f64::EPSILON * n || sxx == 0.0 {
        return 1.0;
    }
    (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
}

pub fn dyn_trajectory_report(repnet: &RepNet, clip: &VideoClip, dense_times: &[f64], ode: &OdeConfig, dtype: DType) -> Result<TrajectoryReport> {
    let code = repnet.encode_clip::<ChaCha8Rng>(&clip_batch(clip, dtype)?, Draw::Mean, ode)?;
    let sol = repnet.roll_dynamics(&code.z_dyn0, dense_times, ode)?;
    let raw: Vec<Vec<f64>> = sol.states.iter().map(to_f64_vec).collect::<Result<_>>()?;
    let d = raw[0].len();
    let mut normalized = raw.clone();
    let mut ranges = vec![0.0; d];
    for j in 0..d {
        let lo = raw.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        ranges[j] = hi - lo;
        for (row, src) in normalized.iter_mut().zip(&raw) {
            row[j] = if hi > lo { 2.0 * (src[j] - lo) / (hi - lo) - 1.0 } else { 0.0 };
        }
    }
    let t0 = dense_times[0];
    let t1 = *dense_times.last().unwrap_or(&t0);
    let cut = t0 + 0.2 * (t1 - t0);
    let tail: Vec<usize> = (0..dense_times.len()).filter(|&i| dense_times[i] >= cut).collect();
    let xs: Vec<f64> = tail.iter().map(|&i| dense_times[i]).collect();
    let r2: Vec<f64> = (0..d)
        .map(|j| linear_r2(&xs, &tail.iter().map(|&i| raw[i][j]).collect::<Vec<_>>()))
        .collect();
    let dominant = (0..d).max_by(|&a, &b| ranges[a].total_cmp(&ranges[b])).unwrap_or(0);
    let span = (clip.len().max(2) - 1) as f64;
    Ok(TrajectoryReport {
        times: dense_times.to_vec(),
        orientation: dense_times.iter().map(|t| t * span).collect(),
        dominant_r2: r2[dominant],
        raw,
        normalized,
        r2,
    })
}

impl TrajectoryReport {
    /// `t, orientation, z_0.., n_0..` where `n_j` is the normalized trace.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::io(path, e.into());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let d = self.raw.first().map(Vec::len).unwrap_or(0);
        let mut header = vec!["t".to_string(), "orientation".to_string()];
        header.extend((0..d).map(|j| format!("z_{j}")));
        header.extend((0..d).map(|j| format!("n_{j}")));
        w.write_record(&header).map_err(io)?;
        for i in 0..self.times.len() {
            let mut rec = vec![format!("{}", self.times[i]), format!("{}", self.orientation[i])];
            rec.extend(self.raw[i].iter().map(|v| format!("{v:.17e}")));
            rec.extend(self.normalized[i].iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Line plot of the normalized traces, one colour per dim.
    pub fn plot(&self, width: u32, height: u32) -> RgbImage {
        let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
        let n = self.times.len();
        if n < 2 {
            return img;
        }
        let (t0, t1) = (self.times[0], self.times[n - 1]);
        let to_px = |t: f64, v: f64| -> (f64, f64) {
            let x = (t - t0) / (t1 - t0).max(f64::EPSILON) * (width - 1) as f64;
            let y = (1.0 - (v + 1.0) / 2.0) * (height - 1) as f64;
            (x, y)
        };
        let d = self.normalized[0].len();
        for j in 0..d {
            let hue = j as f64 / d.max(1) as f64;
            let colour = Rgb([
                (255.0 * (0.5 + 0.5 * (std::f64::consts::TAU * hue).cos())) as u8,
                (255.0 * (0.5 + 0.5 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos())) as u8,
                (255.0 * (0.5 + 0.5 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos())) as u8,
            ]);
            for i in 1..n {
                let (xa, ya) = to_px(self.times[i - 1], self.normalized[i - 1][j]);
                let (xb, yb) = to_px(self.times[i], self.normalized[i][j]);
                let steps = ((xb - xa).abs().max((yb - ya).abs()).ceil() as usize).max(1);
                for s in 0..=steps {
                    let a = s as f64 / steps as f64;
                    let (x, y) = (xa + a * (xb - xa), ya + a * (yb - ya));
                    img.put_pixel(x.round() as u32, y.round() as u32, colour);
                }
            }
        }
        img
    }
}
