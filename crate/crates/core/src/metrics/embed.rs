//! Frozen, deterministic embedders used by the evaluation suite.
//!
//! The conv embedders are seeded random pyramids, so Fréchet distances
//! computed with them are only comparable with each other. The attribute
//! probe reads colour, size and shape off a rendered-style frame and
//! embeds them in the template text space, which gives a text–image
//! similarity without a pretrained image tower.

use std::collections::HashMap;

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::nn::to_f64_vec;
use crate::objectives::{PerceptualExtractor, RandomConvExtractor};
use crate::rng::{self, streams};
use crate::scenes::{object_mask, FactorSpec, Frame, COLOR_WORDS, N_SCALES, N_SHAPES, SHAPE_WORDS, SIZE_WORDS};
use crate::textenc::{TemplateEncoder, TextEmbedding, SLOT_DIM};

/// Per-frame feature vectors and, optionally, class probabilities.
pub trait FrameEmbedder {
    fn embed(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>>;

    fn classify(&self, _frames: &[Frame]) -> Option<Result<Vec<Vec<f64>>>> {
        None
    }
}

/// One feature vector per clip.
pub trait VideoEmbedder {
    fn embed_clip(&self, frames: &[Frame]) -> Result<Vec<f64>>;
}

/// Images mapped into a text embedding space.
pub trait TextAlignedEmbedder {
    fn embed_image(&self, frame: &Frame) -> Result<TextEmbedding>;
}

fn global_pool(features: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let pooled = features
        .iter()
        .map(|f| Ok(f.mean((2, 3))?))
        .collect::<Result<Vec<_>>>()?;
    let cat = Tensor::cat(&pooled, 1)?;
    let n = cat.dim(0)?;
    let flat = to_f64_vec(&cat)?;
    let d = flat.len() / n.max(1);
    Ok(flat.chunks(d).map(<[f64]>::to_vec).collect())
}

/// Global-average-pooled activations of a random conv pyramid.
pub struct RandomFrameEmbedder {
    net: RandomConvExtractor,
}

impl RandomFrameEmbedder {
    pub const WIDTHS: [usize; 3] = [8, 16, 32];

    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            net: RandomConvExtractor::with_widths(seed, streams::EMBEDDER_INIT, &Self::WIDTHS, DType::F32)?,
        })
    }

    pub fn dim(&self) -> usize {
        Self::WIDTHS.iter().sum()
    }
}

impl FrameEmbedder for RandomFrameEmbedder {
    fn embed(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let x = Frame::batch_tensor(frames, DType::F32)?;
        global_pool(&self.net.features(&x)?)
    }
}

/// Frame features followed by a random temporal convolution, summarised by
/// the mean and max over time.
pub struct RandomVideoEmbedder {
    frames: RandomFrameEmbedder,
    /// `[out][in][tap]`.
    kernel: Vec<Vec<[f64; 3]>>,
}

impl RandomVideoEmbedder {
    pub const TEMPORAL_CHANNELS: usize = 32;

    pub fn new(seed: u64) -> Result<Self> {
        let frames = RandomFrameEmbedder::new(seed)?;
        let c_in = frames.dim();
        let mut r = rng::stream(seed, streams::EMBEDDER_INIT + 1);
        let scale = 1.0 / ((3 * c_in) as f64).sqrt();
        let kernel = (0..Self::TEMPORAL_CHANNELS)
            .map(|_| {
                (0..c_in)
                    .map(|_| {
                        let v = rng::normal_vec(&mut r, 3);
                        [v[0] * scale, v[1] * scale, v[2] * scale]
                    })
                    .collect()
            })
            .collect();
        Ok(Self { frames, kernel })
    }

    pub fn dim(&self) -> usize {
        2 * Self::TEMPORAL_CHANNELS
    }
}

impl VideoEmbedder for RandomVideoEmbedder {
    fn embed_clip(&self, frames: &[Frame]) -> Result<Vec<f64>> {
        if frames.len() < 3 {
            return Err(Error::validation("video embedding needs at least 3 frames"));
        }
        let f = self.frames.embed(frames)?;
        let t_out = f.len() - 2;
        let mut mean = vec![0.0; Self::TEMPORAL_CHANNELS];
        let mut max = vec![f64::NEG_INFINITY; Self::TEMPORAL_CHANNELS];
        for t in 0..t_out {
            for (o, taps) in self.kernel.iter().enumerate() {
                let mut acc = 0.0;
                for (c, w) in taps.iter().enumerate() {
                    acc += w[0] * f[t][c] + w[1] * f[t + 1][c] + w[2] * f[t + 2][c];
                }
                let a = acc.max(0.0);
                mean[o] += a / t_out as f64;
                max[o] = max[o].max(a);
            }
        }
        mean.extend(max);
        Ok(mean)
    }
}

/// Value (max channel) above which a pixel counts as object. Wall and floor
/// are rendered darker.
const OBJECT_VALUE: f64 = 0.875;
const HUE_WIDTH: f64 = 0.03;
const SHAPE_WIDTH: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
struct Prototype {
    scale: usize,
    shape: usize,
    features: [f64; 4],
}

/// Reads object colour, size and shape from a frame and embeds the soft
/// attribute slots with the template encoder's map.
pub struct AttributeProbe {
    encoder: TemplateEncoder,
    prototypes: HashMap<usize, Vec<Prototype>>,
}

/// Soft attribute assignment of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributePosterior {
    pub color: Vec<f64>,
    pub size: Vec<f64>,
    pub shape: Vec<f64>,
}

impl AttributePosterior {
    pub fn slots(&self) -> [f64; SLOT_DIM] {
        let mut s = [0.0; SLOT_DIM];
        for (dst, src) in s.iter_mut().zip(self.color.iter().chain(&self.size).chain(&self.shape)) {
            *dst = *src;
        }
        s
    }

    pub fn argmax(&self) -> (usize, usize, usize) {
        let am = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        (am(&self.color), am(&self.size), am(&self.shape))
    }
}

fn hue(rgb: [f64; 3]) -> Option<f64> {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 1e-9 {
        return None;
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    Some(h / 6.0)
}

/// Area, bbox width, bbox height (all relative to the frame) and the
/// fraction of the bbox the mask fills.
fn mask_features(mask: &[bool], n: usize) -> [f64; 4] {
    let (mut area, mut x0, mut x1, mut y0, mut y1) = (0usize, n, 0, n, 0);
    for y in 0..n {
        for x in 0..n {
            if mask[y * n + x] {
                area += 1;
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if area == 0 {
        return [0.0; 4];
    }
    let nf = n as f64;
    let (w, h) = (x1 + 1 - x0, y1 + 1 - y0);
    [
        area as f64 / (nf * nf),
        w as f64 / nf,
        h as f64 / nf,
        area as f64 / (w * h) as f64,
    ]
}

fn softmax_neg_sq(dist2: &[f64], width: f64) -> Vec<f64> {
    let logits: Vec<f64> = dist2.iter().map(|d| -d / (2.0 * width * width)).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

impl AttributeProbe {
    pub const RESOLUTIONS: [usize; 3] = [16, 32, 64];

    pub fn new(text_seed: u64) -> Result<Self> {
        let mut prototypes = HashMap::new();
        for &res in &Self::RESOLUTIONS {
            let mut list = Vec::new();
            for scale in 0..N_SCALES {
                for shape in 0..N_SHAPES {
                    let f = FactorSpec {
                        floor_color: 0,
                        wall_color: 0,
                        object_color: 0,
                        scale: scale as u8,
                        shape: shape as u8,
                    };
                    let mask = object_mask(&f, 7, res)?;
                    list.push(Prototype {
                        scale,
                        shape,
                        features: mask_features(&mask, res),
                    });
                }
            }
            prototypes.insert(res, list);
        }
        Ok(Self {
            encoder: TemplateEncoder::new(text_seed),
            prototypes,
        })
    }

    pub fn posterior(&self, frame: &Frame) -> Result<AttributePosterior> {
        let n = frame.size;
        let protos = self
            .prototypes
            .get(&n)
            .ok_or_else(|| Error::validation(format!("attribute probe has no prototypes at resolution {n}")))?;
        let value = |y: usize, x: usize| -> f64 {
            let [r, g, b] = frame.rgb(y, x);
            r.max(g).max(b) as f64
        };
        let brightest = (0..n * n).map(|i| value(i / n, i % n)).fold(0.0, f64::max);
        // Blurry generated frames may never reach the rendered object value.
        let threshold = OBJECT_VALUE.min(brightest - 0.1);
        let mask: Vec<bool> = (0..n * n).map(|i| value(i / n, i % n) > threshold).collect();

        let (mut sx, mut sy, mut w) = (0.0, 0.0, 0.0);
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let [r, g, b] = frame.rgb(i / n, i % n);
            let rgb = [r as f64, g as f64, b as f64];
            if let Some(h) = hue(rgb) {
                let sat = rgb.iter().copied().fold(0.0, f64::max) - rgb.iter().copied().fold(1.0, f64::min);
                let a = std::f64::consts::TAU * h;
                sx += sat * a.cos();
                sy += sat * a.sin();
                w += sat;
            }
        }
        let color = if w > 0.0 {
            let h = sy.atan2(sx).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
            let d2: Vec<f64> = (0..COLOR_WORDS.len())
                .map(|c| {
                    let d = (h - c as f64 / COLOR_WORDS.len() as f64).rem_euclid(1.0);
                    d.min(1.0 - d).powi(2)
                })
                .collect();
            softmax_neg_sq(&d2, HUE_WIDTH)
        } else {
            vec![1.0 / COLOR_WORDS.len() as f64; COLOR_WORDS.len()]
        };

        let feat = mask_features(&mask, n);
        let d2: Vec<f64> = protos
            .iter()
            .map(|p| p.features.iter().zip(&feat).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        let weights = softmax_neg_sq(&d2, SHAPE_WIDTH);
        let mut size = vec![0.0; SIZE_WORDS.len()];
        let mut shape = vec![0.0; SHAPE_WORDS.len()];
        for (p, wt) in protos.iter().zip(&weights) {
            size[p.scale / 2] += wt;
            shape[p.shape] += wt;
        }
        Ok(AttributePosterior { color, size, shape })
    }
}

impl TextAlignedEmbedder for AttributeProbe {
    fn embed_image(&self, frame: &Frame) -> Result<TextEmbedding> {
        self.encoder.embed_slots(&self.posterior(frame)?.slots())
    }
}

impl FrameEmbedder for AttributeProbe {
    fn embed(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
        frames.iter().map(|f| Ok(self.posterior(f)?.slots().to_vec())).collect()
    }

    /// Object-colour posterior, one class per palette hue.
    fn classify(&self, frames: &[Frame]) -> Option<Result<Vec<Vec<f64>>>> {
        Some(frames.iter().map(|f| Ok(self.posterior(f)?.color)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{describe, render_frame};
    use crate::textenc::TextEncoder;

    #[test]
    fn hue_of_primaries() {
        assert_eq!(hue([1.0, 0.0, 0.0]), Some(0.0));
        assert!((hue([0.0, 1.0, 0.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((hue([0.0, 0.0, 1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(hue([0.5, 0.5, 0.5]), None);
    }

    #[test]
    fn probe_recovers_rendered_attributes() {
        let probe = AttributeProbe::new(0).unwrap();
        for res in [32, 64] {
            let mut wrong = 0;
            let mut total = 0;
            for color in 0..10u8 {
                for scale in 0..6u8 {
                    for shape in 0..4u8 {
                        let f = FactorSpec {
                            floor_color: (color + 3) % 10,
                            wall_color: (color + 7) % 10,
                            object_color: color,
                            scale,
                            shape,
                        };
                        for frame in [0, 7, 14] {
                            let post = probe.posterior(&render_frame(&f, frame, res).unwrap()).unwrap();
                            total += 1;
                            if post.argmax() != (color as usize, f.size_group(), shape as usize) {
                                wrong += 1;
                            }
                        }
                    }
                }
            }
            // The smallest capsule and cylinder nearly coincide at 32×32.
            assert!(wrong * 20 <= total, "res {res}: {wrong}/{total} misread");
        }
    }

    #[test]
    fn rendered_frames_align_with_own_caption() {
        let probe = AttributeProbe::new(0).unwrap();
        let enc = TemplateEncoder::new(0);
        let f = FactorSpec {
            floor_color: 2,
            wall_color: 5,
            object_color: 8,
            scale: 4,
            shape: 1,
        };
        let frame = render_frame(&f, 3, 32).unwrap();
        let img = probe.embed_image(&frame).unwrap();
        let own = enc.encode(&describe(&f)[0]).unwrap();
        let other = enc
            .encode(&describe(&FactorSpec { object_color: 2, ..f })[0])
            .unwrap();
        assert!(img.cosine(&own) > 0.9);
        assert!(img.cosine(&own) > img.cosine(&other));
    }

    #[test]
    fn conv_embedders_are_deterministic() {
        let f = FactorSpec {
            floor_color: 1,
            wall_color: 2,
            object_color: 3,
            scale: 1,
            shape: 2,
        };
        let frames: Vec<Frame> = (0..15).map(|i| render_frame(&f, i, 16).unwrap()).collect();
        let e = RandomFrameEmbedder::new(9).unwrap();
        let a = e.embed(&frames).unwrap();
        assert_eq!(a, e.embed(&frames).unwrap());
        assert_eq!(a.len(), 15);
        assert_eq!(a[0].len(), e.dim());
        let v = RandomVideoEmbedder::new(9).unwrap();
        let c = v.embed_clip(&frames).unwrap();
        assert_eq!(c.len(), v.dim());
        assert_eq!(c, RandomVideoEmbedder::new(9).unwrap().embed_clip(&frames).unwrap());
        assert!(v.embed_clip(&frames[..2]).is_err());
    }

    #[test]
    fn classify_rows_are_distributions() {
        let probe = AttributeProbe::new(0).unwrap();
        let f = FactorSpec {
            floor_color: 1,
            wall_color: 2,
            object_color: 3,
            scale: 1,
            shape: 2,
        };
        let rows = probe.classify(&[render_frame(&f, 0, 16).unwrap()]).unwrap().unwrap();
        assert!((rows[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
