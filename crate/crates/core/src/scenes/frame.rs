use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Square RGB image, channel-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn filled(size: usize, rgb: [f32; 3]) -> Self {
        let plane = size * size;
        let mut data = vec![0.0; 3 * plane];
        for (c, v) in rgb.iter().enumerate() {
            data[c * plane..(c + 1) * plane].fill(*v);
        }
        Self { size, data }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.size + y) * self.size + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.size + y) * self.size + x] = v;
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    /// Box-filtered copy at `size / factor`.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.size % factor != 0 {
            return Err(Error::validation(format!("cannot shrink a {}px frame by {factor}", self.size)));
        }
        let size = self.size / factor;
        let mut out = Frame::filled(size, [0.0; 3]);
        let norm = 1.0 / (factor * factor) as f32;
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.get(c, y * factor + dy, x * factor + dx);
                        }
                    }
                    out.set(c, y, x, acc * norm);
                }
            }
        }
        Ok(out)
    }

    /// Quantizes to 8 bits the same way the PNG writer does.
    pub fn quantized(&self) -> Self {
        Self {
            size: self.size,
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        }
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        let n = self.size as u32;
        RgbImage::from_fn(n, n, |x, y| {
            let [r, g, b] = self.rgb(y as usize, x as usize);
            Rgb([to_u8(r), to_u8(g), to_u8(b)])
        })
    }

    pub fn from_rgb_image(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::validation(format!("frame must be square, got {w}x{h}")));
        }
        let size = w as usize;
        let mut f = Frame::filled(size, [0.0; 3]);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                f.set(c, y as usize, x as usize, p[c] as f32 / 255.0);
            }
        }
        Ok(f)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb_image().save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Self::from_rgb_image(&img)
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// `(3, size, size)` tensor.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, (3, self.size, self.size), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// Stacks frames into `(N, 3, size, size)`.
    pub fn batch_tensor(frames: &[Frame], dtype: DType) -> Result<Tensor> {
        let size = frames
            .first()
            .map(|f| f.size)
            .ok_or_else(|| Error::validation("empty frame batch"))?;
        if frames.iter().any(|f| f.size != size) {
            return Err(Error::validation("frames in a batch must share one size"));
        }
        let data: Vec<f32> = frames.iter().flat_map(|f| f.data.iter().copied()).collect();
        Ok(Tensor::from_vec(data, (frames.len(), 3, size, size), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// Splits an `(N, 3, H, W)` tensor into frames, clamping to `[0, 1]`.
    pub fn from_batch_tensor(t: &Tensor) -> Result<Vec<Frame>> {
        let (n, c, h, w) = t.dims4()?;
        if c != 3 || h != w {
            return Err(Error::validation(format!("expected (N, 3, S, S), got {:?}", t.dims())));
        }
        let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let per = 3 * h * w;
        Ok((0..n)
            .map(|i| Frame {
                size: h,
                data: flat[i * per..(i + 1) * per].iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            })
            .collect())
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tiles equally sized frames into one image, row-major.
pub fn tile(rows: &[Vec<Frame>]) -> Option<RgbImage> {
    let n_cols = rows.iter().map(Vec::len).max()?;
    let s = rows.first()?.first()?.size;
    let mut out = RgbImage::from_pixel((s * n_cols) as u32, (s * rows.len()) as u32, Rgb([255, 255, 255]));
    for (r, row) in rows.iter().enumerate() {
        for (c, f) in row.iter().enumerate() {
            let img = f.to_rgb_image();
            image::imageops::replace(&mut out, &img, (c * s) as i64, (r * s) as i64);
        }
    }
    Some(out)
}
