//! Flat 2D stand-in for a 3D shapes renderer.
//!
//! Scene layout in unit coordinates: wall above the horizon at `v = 0.5`,
//! floor below, one object centred at `v = 0.55`. Orientation moves the
//! object along the horizontal parallax axis at constant speed.

use serde::{Deserialize, Serialize};

use super::{FactorSpec, Frame, N_COLORS, N_ORIENTATIONS};
use crate::error::{Error, Result};

pub const COLOR_WORDS: [&str; N_COLORS] = [
    "red", "orange", "yellow", "lime", "green", "cyan", "azure", "blue", "purple", "pink",
];
pub const SHAPE_WORDS: [&str; 4] = ["cube", "sphere", "cylinder", "capsule"];

const HORIZON: f64 = 0.5;
const OBJECT_CY: f64 = 0.55;

/// Ten evenly spaced hues at fixed saturation; each layer has its own value
/// (brightness) so an object never vanishes into a same-hue wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub saturation: f64,
    pub wall_value: f64,
    pub floor_value: f64,
    pub object_value: f64,
    pub entries: Vec<PaletteEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub index: usize,
    pub hue: f64,
    pub word: String,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            saturation: 0.75,
            wall_value: 0.55,
            floor_value: 0.75,
            object_value: 1.0,
            entries: COLOR_WORDS
                .iter()
                .enumerate()
                .map(|(i, w)| PaletteEntry {
                    index: i,
                    hue: i as f64 / N_COLORS as f64,
                    word: (*w).to_string(),
                })
                .collect(),
        }
    }
}

impl Palette {
    pub fn rgb(&self, color: usize, value: f64) -> [f32; 3] {
        hsv_to_rgb(self.entries[color].hue, self.saturation, value)
    }

    pub fn wall(&self, color: usize) -> [f32; 3] {
        self.rgb(color, self.wall_value)
    }

    pub fn floor(&self, color: usize) -> [f32; 3] {
        self.rgb(color, self.floor_value)
    }

    pub fn object(&self, color: usize) -> [f32; 3] {
        self.rgb(color, self.object_value)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    // 8-bit quantization happens here so PNG round trips are lossless.
    [r, g, b].map(|c| ((c * 255.0).round() / 255.0) as f32)
}

fn half_size(scale: u8) -> f64 {
    0.09 + 0.022 * scale as f64
}

fn object_cx(orientation: usize) -> f64 {
    0.22 + 0.56 * orientation as f64 / (N_ORIENTATIONS - 1) as f64
}

fn inside(shape: u8, r: f64, dx: f64, dy: f64) -> bool {
    match shape {
        // cube
        0 => dx.abs() <= r && dy.abs() <= r,
        // sphere
        1 => dx * dx + dy * dy <= (1.1 * r).powi(2),
        // cylinder
        2 => dx.abs() <= 0.75 * r && dy.abs() <= 1.3 * r,
        // capsule: a stadium with the cylinder's outline
        _ => {
            let w = 0.75 * r;
            let core = 1.3 * r - w;
            dx.abs() <= w && (dy.abs() <= core || dx * dx + (dy.abs() - core).powi(2) <= w * w)
        }
    }
}

fn check_resolution(resolution: usize) -> Result<()> {
    if !(resolution.is_power_of_two() && (16..=64).contains(&resolution)) {
        return Err(Error::validation(format!(
            "resolution must be 16, 32 or 64, got {resolution}"
        )));
    }
    Ok(())
}

/// Boolean silhouette of the object at `frame_index`, row-major.
pub fn object_mask(factors: &FactorSpec, frame_index: usize, resolution: usize) -> Result<Vec<bool>> {
    factors.validate()?;
    check_resolution(resolution)?;
    if frame_index >= N_ORIENTATIONS {
        return Err(Error::validation(format!(
            "frame index {frame_index} out of range 0..{N_ORIENTATIONS}"
        )));
    }
    let r = half_size(factors.scale);
    let cx = object_cx(frame_index);
    let n = resolution as f64;
    let mut mask = Vec::with_capacity(resolution * resolution);
    for y in 0..resolution {
        for x in 0..resolution {
            let u = (x as f64 + 0.5) / n;
            let v = (y as f64 + 0.5) / n;
            mask.push(inside(factors.shape, r, u - cx, v - OBJECT_CY));
        }
    }
    Ok(mask)
}

/// Deterministic frame for `factors` at orientation `frame_index`.
pub fn render_frame(factors: &FactorSpec, frame_index: usize, resolution: usize) -> Result<Frame> {
    let mask = object_mask(factors, frame_index, resolution)?;
    let palette = Palette::default();
    let wall = palette.wall(factors.wall_color as usize);
    let floor = palette.floor(factors.floor_color as usize);
    let object = palette.object(factors.object_color as usize);
    let n = resolution as f64;
    let mut frame = Frame::filled(resolution, [0.0; 3]);
    for y in 0..resolution {
        let v = (y as f64 + 0.5) / n;
        let band = if v < HORIZON { wall } else { floor };
        for x in 0..resolution {
            let rgb = if mask[y * resolution + x] { object } else { band };
            for (c, value) in rgb.iter().enumerate() {
                frame.set(c, y, x, *value);
            }
        }
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factors(scale: u8, shape: u8) -> FactorSpec {
        FactorSpec {
            floor_color: 3,
            wall_color: 6,
            object_color: 0,
            scale,
            shape,
        }
    }

    #[test]
    fn deterministic() {
        let f = factors(2, 1);
        assert_eq!(render_frame(&f, 4, 32).unwrap(), render_frame(&f, 4, 32).unwrap());
    }

    #[test]
    fn quantization_is_idempotent() {
        let frame = render_frame(&factors(2, 1), 4, 32).unwrap();
        assert_eq!(frame.quantized(), frame);
    }

    fn centroid_x(mask: &[bool], n: usize) -> f64 {
        let (mut sx, mut k) = (0.0, 0usize);
        for (i, &m) in mask.iter().enumerate() {
            if m {
                sx += (i % n) as f64;
                k += 1;
            }
        }
        sx / k as f64
    }

    #[test]
    fn orientation_moves_centroid_monotonically() {
        let f = factors(3, 0);
        let xs: Vec<f64> = (0..N_ORIENTATIONS)
            .map(|i| centroid_x(&object_mask(&f, i, 64).unwrap(), 64))
            .collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
        assert!(xs[14] > xs[0]);
    }

    /// Counts pixels whose colour equals the object colour, independent of
    /// the renderer's own mask.
    fn count_object_pixels(frame: &Frame, rgb: [f32; 3]) -> usize {
        let n = frame.size;
        (0..n)
            .flat_map(|y| (0..n).map(move |x| (y, x)))
            .filter(|&(y, x)| frame.rgb(y, x) == rgb)
            .count()
    }

    #[test]
    fn big_is_larger_than_small() {
        let palette = Palette::default();
        for shape in 0..4 {
            for res in [32, 64] {
                let small = render_frame(&factors(0, shape), 7, res).unwrap();
                let big = render_frame(&factors(5, shape), 7, res).unwrap();
                let obj = palette.object(0);
                let (a_small, a_big) = (count_object_pixels(&small, obj), count_object_pixels(&big, obj));
                assert!(a_big > a_small, "shape {shape} res {res}: {a_big} vs {a_small}");
                assert!(a_small > 0);
            }
        }
    }

    #[test]
    fn object_stays_off_border_rows() {
        for shape in 0..4 {
            for o in [0, 14] {
                let m = object_mask(&factors(5, shape), o, 32).unwrap();
                assert!(m[..2 * 32].iter().all(|&b| !b));
                assert!(m[30 * 32..].iter().all(|&b| !b));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut f = factors(0, 0);
        f.shape = 4;
        assert!(render_frame(&f, 0, 32).unwrap_err().is_validation());
        assert!(render_frame(&factors(0, 0), 15, 32).is_err());
        assert!(render_frame(&factors(0, 0), 0, 48).is_err());
    }

    #[test]
    fn palette_layers_distinct() {
        let p = Palette::default();
        for c in 0..N_COLORS {
            assert_ne!(p.object(c), p.wall(c));
            assert_ne!(p.object(c), p.floor(c));
        }
    }
}
