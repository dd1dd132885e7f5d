//! Optical density conversion and two-stain color deconvolution.
//!
//! Intensities map to optical density per channel as `OD = -log10(I / white)`,
//! with `I = 0` treated as `I = 1` so that OD stays finite. Deconvolution solves
//! the per-pixel least-squares problem `od ≈ c_h·H + c_e·E` on a fixed stain
//! basis and clamps negative concentrations afterwards.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

pub const DEFAULT_PIXEL_SIZE: f64 = 0.25;
pub const DEFAULT_WHITE: [f64; 3] = [255.0; 3];

/// 8-bit RGB tile, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbTile {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    /// µm per pixel.
    pub pixel_size: f64,
}

impl RgbTile {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>, pixel_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidTile(format!("zero-sized tile {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidTile(format!(
                "{} pixels for a {width}x{height} tile",
                pixels.len()
            )));
        }
        if !(pixel_size > 0.0) {
            return Err(Error::InvalidTile(format!("pixel size {pixel_size}")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            pixel_size,
        })
    }

    /// Reads an 8-bit RGB PNG or TIFF.
    pub fn load(path: &Path, pixel_size: f64) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(w as usize, h as usize, pixels, pixel_size)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        crate::io::write_png_rgb8(path, self.width as u32, self.height as u32, &raw)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

/// Unit-norm hematoxylin and eosin absorbance vectors in RGB OD space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainMatrix {
    pub hema: [f64; 3],
    pub eosin: [f64; 3],
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::new([0.650, 0.704, 0.286], [0.072, 0.990, 0.105])
            .expect("reference H&E basis is well conditioned")
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalized(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = dot(&v, &v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidStainMatrix(format!("vector {v:?} has no direction")));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

impl StainMatrix {
    /// Normalizes both vectors and rejects a degenerate basis.
    pub fn new(hema: [f64; 3], eosin: [f64; 3]) -> Result<Self> {
        let m = Self {
            hema: normalized(hema)?,
            eosin: normalized(eosin)?,
        };
        let det = m.normal_determinant();
        if det.abs() < 1e-12 {
            return Err(Error::SingularStainMatrix(det));
        }
        Ok(m)
    }

    /// Determinant of the 2×2 normal-equation system `[[H·H, H·E], [E·H, E·E]]`.
    pub fn normal_determinant(&self) -> f64 {
        let hh = dot(&self.hema, &self.hema);
        let ee = dot(&self.eosin, &self.eosin);
        let he = dot(&self.hema, &self.eosin);
        hh * ee - he * he
    }

    pub fn swapped(&self) -> Self {
        Self {
            hema: self.eosin,
            eosin: self.hema,
        }
    }

    /// Loads `{"hema": [r,g,b], "eosin": [r,g,b]}`; vectors are normalized on load.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw: StainMatrix = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::new(raw.hema, raw.eosin)
    }

    /// OD vector of the given stain concentrations.
    #[inline]
    pub fn mix(&self, c_h: f64, c_e: f64) -> [f64; 3] {
        [
            c_h * self.hema[0] + c_e * self.eosin[0],
            c_h * self.hema[1] + c_e * self.eosin[1],
            c_h * self.hema[2] + c_e * self.eosin[2],
        ]
    }

    /// Unclamped least-squares concentrations and the residual norm for one OD vector.
    pub fn solve(&self, od: [f64; 3]) -> (f64, f64, f64) {
        let hh = dot(&self.hema, &self.hema);
        let ee = dot(&self.eosin, &self.eosin);
        let he = dot(&self.hema, &self.eosin);
        let det = hh * ee - he * he;
        let bh = dot(&self.hema, &od);
        let be = dot(&self.eosin, &od);
        let c_h = (ee * bh - he * be) / det;
        let c_e = (hh * be - he * bh) / det;
        let fit = self.mix(c_h, c_e);
        let r = [od[0] - fit[0], od[1] - fit[1], od[2] - fit[2]];
        (c_h, c_e, dot(&r, &r).sqrt())
    }
}

/// OD of one 8-bit intensity against a white point.
#[inline]
pub fn intensity_to_od(i: u8, white: f64) -> f64 {
    let i = f64::from(i.max(1));
    -(i / white).log10()
}

/// Inverse of [`intensity_to_od`]: `round(white · 10^-OD)`, halves rounded away
/// from zero, clamped to `[0, 255]`.
#[inline]
pub fn od_to_intensity(od: f64, white: f64) -> u8 {
    (white * 10f64.powf(-od)).round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_od(tile: &RgbTile, white: [f64; 3]) -> [Plane; 3] {
    std::array::from_fn(|c| {
        let data = tile
            .pixels
            .iter()
            .map(|px| intensity_to_od(px[c], white[c]))
            .collect();
        Plane::from_vec(tile.width, tile.height, data)
    })
}

pub fn od_to_rgb(od: &[Plane; 3], white: [f64; 3], pixel_size: f64) -> Result<RgbTile> {
    let (w, h) = (od[0].width, od[0].height);
    if od.iter().any(|p| p.width != w || p.height != h) {
        return Err(Error::InvalidTile("OD planes differ in size".into()));
    }
    let pixels = (0..w * h)
        .map(|i| std::array::from_fn(|c| od_to_intensity(od[c].data[i], white[c])))
        .collect();
    RgbTile::new(w, h, pixels, pixel_size)
}

/// Stain concentration planes and the per-pixel least-squares residual.
#[derive(Debug, Clone)]
pub struct StainPlanes {
    pub hema: Plane,
    pub eosin: Plane,
    pub residual_norm: Plane,
}

pub fn deconvolve(od: &[Plane; 3], stains: &StainMatrix) -> Result<StainPlanes> {
    let det = stains.normal_determinant();
    if det.abs() < 1e-12 {
        return Err(Error::SingularStainMatrix(det));
    }
    let (w, h) = (od[0].width, od[0].height);
    if od.iter().any(|p| p.width != w || p.height != h) {
        return Err(Error::InvalidTile("OD planes differ in size".into()));
    }
    let solved: Vec<(f64, f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (c_h, c_e, r) = stains.solve([od[0].data[i], od[1].data[i], od[2].data[i]]);
            (c_h.max(0.0), c_e.max(0.0), r)
        })
        .collect();
    Ok(StainPlanes {
        hema: Plane::from_vec(w, h, solved.iter().map(|s| s.0).collect()),
        eosin: Plane::from_vec(w, h, solved.iter().map(|s| s.1).collect()),
        residual_norm: Plane::from_vec(w, h, solved.iter().map(|s| s.2).collect()),
    })
}

/// OD planes of a tile together with its stain decomposition.
#[derive(Debug, Clone)]
pub struct OdTileSet {
    pub width: usize,
    pub height: usize,
    pub od_rgb: [Plane; 3],
    pub hema: Plane,
    pub eosin: Plane,
    pub residual_norm: Plane,
}

impl OdTileSet {
    pub fn from_tile(tile: &RgbTile, white: [f64; 3], stains: &StainMatrix) -> Result<Self> {
        let od_rgb = rgb_to_od(tile, white);
        let StainPlanes {
            hema,
            eosin,
            residual_norm,
        } = deconvolve(&od_rgb, stains)?;
        Ok(Self {
            width: tile.width,
            height: tile.height,
            od_rgb,
            hema,
            eosin,
            residual_norm,
        })
    }
}
