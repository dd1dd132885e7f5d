//! Dense single-channel rasters and sparse pixel masks.

use serde::{Deserialize, Serialize};

/// Row-major real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::from_vec(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Integer pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub y: u32,
    pub x: u32,
}

impl Pixel {
    pub fn new(x: u32, y: u32) -> Self {
        Self { y, x }
    }
}

/// A set of pixels kept sorted in raster order (row, then column).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Mask {
    pixels: Vec<Pixel>,
}

impl Mask {
    pub fn new(mut pixels: Vec<Pixel>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self { pixels }
    }

    /// Caller guarantees `pixels` is sorted and free of duplicates.
    pub(crate) fn from_sorted(pixels: Vec<Pixel>) -> Self {
        debug_assert!(pixels.windows(2).all(|w| w[0] < w[1]));
        Self { pixels }
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, p: Pixel) -> bool {
        self.pixels.binary_search(&p).is_ok()
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let first = self.pixels.first()?;
        let last = self.pixels.last()?;
        let (x0, x1) = self
            .pixels
            .iter()
            .fold((u32::MAX, 0), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
        Some((x0, first.y, x1, last.y))
    }

    /// Mean pixel-center position in pixel units.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.pixels.is_empty() {
            return None;
        }
        let n = self.pixels.len() as f64;
        let (sx, sy) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x as f64, sy + p.y as f64));
        Some((sx / n, sy / n))
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.pixels, &other.pixels);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Mask::from_sorted(out)
    }

    pub fn intersection_len(&self, other: &Mask) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.pixels, &other.pixels);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        Mask::from_sorted(
            self.pixels
                .iter()
                .copied()
                .filter(|p| !other.contains(*p))
                .collect(),
        )
    }

    /// Shift every pixel by a non-negative offset.
    pub fn translated(&self, dx: u32, dy: u32) -> Mask {
        Mask::from_sorted(
            self.pixels
                .iter()
                .map(|p| Pixel::new(p.x + dx, p.y + dy))
                .collect(),
        )
    }
}

impl FromIterator<Pixel> for Mask {
    fn from_iter<I: IntoIterator<Item = Pixel>>(iter: I) -> Self {
        Mask::new(iter.into_iter().collect())
    }
}
