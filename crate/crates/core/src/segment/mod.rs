//! Nucleus detection on the hematoxylin plane and cytoplasm expansion.
//!
//! The hematoxylin OD plane is smoothed and background-subtracted, thresholded,
//! and touching nuclei are split by a watershed on the distance map. Each
//! nucleus then grows into a cytoplasm ring bounded by the expansion distance,
//! with contested pixels going to the nearest nucleus.

pub mod distance;
pub mod filters;
pub mod watershed;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::contour;
use crate::error::{Error, Result};
use crate::io;
use crate::plane::{Mask, Pixel, Plane};

/// Physical parameters of nucleus detection. Lengths are µm, areas µm².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationParams {
    pub pixel_size: f64,
    pub gaussian_sigma: f64,
    pub background_radius: f64,
    pub od_threshold: f64,
    pub min_nucleus_area: f64,
    pub max_nucleus_area: f64,
    pub cell_expansion: f64,
    /// Distance-map maxima closer than this (pixels) seed a single nucleus.
    pub seed_merge_distance: f64,
    /// Minimum dynamic (pixels) a distance-map maximum needs to seed its own nucleus.
    pub seed_min_dynamic: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            pixel_size: 0.25,
            gaussian_sigma: 1.5,
            background_radius: 8.0,
            od_threshold: 0.1,
            min_nucleus_area: 10.0,
            max_nucleus_area: 400.0,
            cell_expansion: 5.0,
            seed_merge_distance: 4.0,
            seed_min_dynamic: 1.0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pixel_size", self.pixel_size),
            ("gaussian_sigma", self.gaussian_sigma),
            ("background_radius", self.background_radius),
            ("od_threshold", self.od_threshold),
            ("min_nucleus_area", self.min_nucleus_area),
            ("max_nucleus_area", self.max_nucleus_area),
            ("cell_expansion", self.cell_expansion),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_nucleus_area >= self.max_nucleus_area {
            return Err(Error::InvalidParams(format!(
                "min_nucleus_area {} must be below max_nucleus_area {}",
                self.min_nucleus_area, self.max_nucleus_area
            )));
        }
        if self.seed_merge_distance < 0.0 || self.seed_min_dynamic < 0.0 {
            return Err(Error::InvalidParams("seed parameters must be non-negative".into()));
        }
        Ok(())
    }

    pub fn sigma_px(&self) -> f64 {
        self.gaussian_sigma / self.pixel_size
    }

    pub fn background_radius_px(&self) -> f64 {
        self.background_radius / self.pixel_size
    }

    pub fn expansion_px(&self) -> f64 {
        self.cell_expansion / self.pixel_size
    }

    /// Admissible nucleus area range in pixels.
    pub fn area_range_px(&self) -> (f64, f64) {
        let a = self.pixel_size * self.pixel_size;
        (self.min_nucleus_area / a, self.max_nucleus_area / a)
    }
}

/// One segmented cell. Masks are in tile pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CellObject {
    pub id: u32,
    pub nucleus: Mask,
    pub cytoplasm: Mask,
    pub cell: Mask,
    /// Nucleus centroid in µm from the tile's top-left corner.
    pub centroid: (f64, f64),
    pub tile_id: String,
}

impl CellObject {
    /// Nucleus centroid in pixel units (pixel centers at half-integers).
    pub fn centroid_px(&self, pixel_size: f64) -> (f64, f64) {
        (self.centroid.0 / pixel_size, self.centroid.1 / pixel_size)
    }
}

/// Gaussian smoothing followed by subtraction of a disk-opening background.
pub fn preprocess(hema: &Plane, params: &SegmentationParams) -> Plane {
    let blurred = filters::gaussian_blur(hema, params.sigma_px());
    let background = filters::open_disk(&blurred, params.background_radius_px());
    let data = blurred
        .data
        .iter()
        .zip(&background.data)
        .map(|(b, o)| (b - o).max(0.0))
        .collect();
    Plane::from_vec(hema.width, hema.height, data)
}

/// Thresholds the preprocessed plane and splits touching nuclei. Masks are
/// returned in raster order of their first pixel.
pub fn segment_nuclei(smoothed: &Plane, params: &SegmentationParams) -> Vec<Mask> {
    let (w, h) = (smoothed.width, smoothed.height);
    let fg: Vec<bool> = smoothed.data.iter().map(|&v| v > params.od_threshold).collect();
    let bg: Vec<bool> = fg.iter().map(|f| !f).collect();
    let dist: Vec<f64> = distance::squared_edt(w, h, &bg)
        .into_iter()
        .map(|d| if d.is_finite() { d.sqrt() } else { (w + h) as f64 })
        .collect();
    let labels = watershed::distance_watershed(
        w,
        h,
        &fg,
        &dist,
        params.seed_merge_distance,
        params.seed_min_dynamic,
    );
    let n = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut regions: Vec<Vec<Pixel>> = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            regions[l as usize - 1].push(Pixel::new((i % w) as u32, (i / w) as u32));
        }
    }
    let (lo, hi) = params.area_range_px();
    regions
        .into_iter()
        .filter(|r| (r.len() as f64) >= lo && (r.len() as f64) <= hi)
        .map(Mask::from_sorted)
        .collect()
}

/// Grows each nucleus by up to `cell_expansion`. A pixel joins the nucleus at
/// the smallest Euclidean distance (ties to the lower id) if that distance is
/// within the expansion radius. Cell ids are 1-based positions in `nuclei`.
pub fn expand_cells(
    nuclei: &[Mask],
    params: &SegmentationParams,
    width: usize,
    height: usize,
    tile_id: &str,
) -> Vec<CellObject> {
    let radius = params.expansion_px();
    let r2 = radius * radius;
    let reach = radius.floor() as i64;
    let mut best_d2 = vec![f64::INFINITY; width * height];
    let mut owner = vec![0u32; width * height];

    for (k, nucleus) in nuclei.iter().enumerate() {
        let id = k as u32 + 1;
        let Some((bx0, by0, bx1, by1)) = nucleus.bbox() else {
            continue;
        };
        let x0 = (i64::from(bx0) - reach).max(0) as usize;
        let y0 = (i64::from(by0) - reach).max(0) as usize;
        let x1 = (i64::from(bx1) + reach).min(width as i64 - 1) as usize;
        let y1 = (i64::from(by1) + reach).min(height as i64 - 1) as usize;
        let (ww, wh) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut feature = vec![false; ww * wh];
        for p in nucleus.pixels() {
            feature[(p.y as usize - y0) * ww + (p.x as usize - x0)] = true;
        }
        let d2 = distance::squared_edt(ww, wh, &feature);
        for ly in 0..wh {
            for lx in 0..ww {
                let d = d2[ly * ww + lx];
                if d > r2 {
                    continue;
                }
                let gi = (ly + y0) * width + (lx + x0);
                // Ids are visited in increasing order, so equality keeps the lower id.
                if d < best_d2[gi] {
                    best_d2[gi] = d;
                    owner[gi] = id;
                }
            }
        }
    }

    let mut cell_px: Vec<Vec<Pixel>> = vec![Vec::new(); nuclei.len()];
    for (i, &o) in owner.iter().enumerate() {
        if o > 0 {
            cell_px[o as usize - 1].push(Pixel::new((i % width) as u32, (i / width) as u32));
        }
    }
    nuclei
        .iter()
        .zip(cell_px)
        .enumerate()
        .map(|(k, (nucleus, px))| {
            let cell = Mask::from_sorted(px);
            let cytoplasm = cell.difference(nucleus);
            let (cx, cy) = nucleus.centroid().unwrap_or((0.0, 0.0));
            CellObject {
                id: k as u32 + 1,
                nucleus: nucleus.clone(),
                cytoplasm,
                cell,
                centroid: ((cx + 0.5) * params.pixel_size, (cy + 0.5) * params.pixel_size),
                tile_id: tile_id.to_string(),
            }
        })
        .collect()
}

/// Full detection on a hematoxylin plane.
pub fn segment_cells(hema: &Plane, params: &SegmentationParams, tile_id: &str) -> Vec<CellObject> {
    let smoothed = preprocess(hema, params);
    let nuclei = segment_nuclei(&smoothed, params);
    expand_cells(&nuclei, params, hema.width, hema.height, tile_id)
}

/// Label raster with cell ids (0 = background) for either compartment.
pub fn label_raster(cells: &[CellObject], width: usize, height: usize, nucleus: bool) -> Result<Vec<u16>> {
    let mut out = vec![0u16; width * height];
    for c in cells {
        let id = u16::try_from(c.id)
            .map_err(|_| Error::InvalidParams(format!("cell id {} exceeds 16-bit labels", c.id)))?;
        let mask = if nucleus { &c.nucleus } else { &c.cell };
        for p in mask.pixels() {
            out[p.y as usize * width + p.x as usize] = id;
        }
    }
    Ok(out)
}

pub fn write_label_png(path: &Path, cells: &[CellObject], width: usize, height: usize, nucleus: bool) -> Result<()> {
    io::write_png_gray16(path, width as u32, height as u32, label_raster(cells, width, height, nucleus)?)
}

fn masks_from_labels(width: usize, labels: &[u16]) -> Vec<Vec<Pixel>> {
    let n = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut out = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            out[l as usize - 1].push(Pixel::new((i % width) as u32, (i / width) as u32));
        }
    }
    out
}

/// Rebuilds cells from nucleus and cell label PNGs written by [`write_label_png`].
pub fn read_label_pngs(nuclei_png: &Path, cells_png: &Path, pixel_size: f64, tile_id: &str) -> Result<(usize, usize, Vec<CellObject>)> {
    let (w, h, nl) = io::read_png_gray16(nuclei_png)?;
    let (w2, h2, cl) = io::read_png_gray16(cells_png)?;
    if (w, h) != (w2, h2) {
        return Err(Error::InvalidTile("nucleus and cell label images differ in size".into()));
    }
    let nuclei = masks_from_labels(w, &nl);
    let mut cells = masks_from_labels(w, &cl);
    cells.resize(nuclei.len(), Vec::new());
    let out = nuclei
        .into_iter()
        .zip(cells)
        .enumerate()
        .filter(|(_, (n, _))| !n.is_empty())
        .map(|(k, (n, c))| {
            let nucleus = Mask::from_sorted(n);
            let cell = Mask::from_sorted(c);
            let cytoplasm = cell.difference(&nucleus);
            let (cx, cy) = nucleus.centroid().unwrap_or((0.0, 0.0));
            CellObject {
                id: k as u32 + 1,
                nucleus,
                cytoplasm,
                cell,
                centroid: ((cx + 0.5) * pixel_size, (cy + 0.5) * pixel_size),
                tile_id: tile_id.to_string(),
            }
        })
        .collect();
    Ok((w, h, out))
}

fn ring_um(mask: &Mask, pixel_size: f64) -> Vec<Value> {
    let mut ring: Vec<Value> = contour::outline(mask)
        .into_iter()
        .map(|(x, y)| json!([x as f64 * pixel_size, y as f64 * pixel_size]))
        .collect();
    if let Some(first) = ring.first().cloned() {
        ring.push(first);
    }
    ring
}

/// Nucleus and cell boundaries as a GeoJSON FeatureCollection in µm.
/// Rings are closed and have positive shoelace area in the stored frame.
pub fn cells_to_geojson(cells: &[CellObject], pixel_size: f64) -> Value {
    let features: Vec<Value> = cells
        .iter()
        .flat_map(|c| {
            [("nucleus", &c.nucleus), ("cell", &c.cell)].map(|(kind, mask)| {
                json!({
                    "type": "Feature",
                    "properties": { "cell_id": c.id, "object": kind, "roi_id": c.tile_id },
                    "geometry": { "type": "Polygon", "coordinates": [ring_um(mask, pixel_size)] }
                })
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_plane(w: usize, h: usize, disks: &[(f64, f64, f64)], value: f64) -> Plane {
        let mut p = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                if disks.iter().any(|&(cx, cy, r)| (fx - cx).powi(2) + (fy - cy).powi(2) <= r * r) {
                    p.set(x, y, value);
                }
            }
        }
        p
    }

    fn disk_mask(cx: i64, cy: i64, r: f64) -> Mask {
        let ri = r.ceil() as i64;
        let mut v = Vec::new();
        for y in cy - ri..=cy + ri {
            for x in cx - ri..=cx + ri {
                if (((x - cx).pow(2) + (y - cy).pow(2)) as f64) <= r * r {
                    v.push(Pixel::new(x as u32, y as u32));
                }
            }
        }
        Mask::new(v)
    }

    #[test]
    fn sigma_unit_conversion() {
        let p = SegmentationParams::default();
        assert!((p.sigma_px() - 6.0).abs() < 1e-12);
        assert!((p.expansion_px() - 20.0).abs() < 1e-12);
        let (lo, hi) = p.area_range_px();
        assert!((lo - 160.0).abs() < 1e-9 && (hi - 6400.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SegmentationParams::default();
        p.min_nucleus_area = 500.0;
        assert!(p.validate().is_err());
        let mut p = SegmentationParams::default();
        p.gaussian_sigma = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn preprocess_constant_plane_is_zero() {
        let p = Plane::filled(120, 90, 0.6);
        let out = preprocess(&p, &SegmentationParams::default());
        assert!(out.data.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn preprocess_keeps_small_disk() {
        let params = SegmentationParams::default();
        let p = disk_plane(160, 160, &[(80.0, 80.0, 10.0)], 0.8);
        let blurred = filters::gaussian_blur(&p, params.sigma_px());
        let out = preprocess(&p, &params);
        // The disk is far narrower than the background disk, so the opening sees
        // only the surrounding zero level and the blurred disk survives intact.
        assert!((out.get(80, 80) - blurred.get(80, 80)).abs() < 1e-9);
        assert!(out.get(80, 80) > 0.3);
        assert!(out.get(5, 5) < 1e-9);
    }

    #[test]
    fn one_disk_radius_10_gives_one_nucleus() {
        let params = SegmentationParams::default();
        let p = disk_plane(128, 128, &[(64.0, 64.0, 10.0)], 0.8);
        let nuclei = segment_nuclei(&preprocess(&p, &params), &params);
        assert_eq!(nuclei.len(), 1);
        assert!(nuclei[0].len() >= 160);
        assert!(nuclei[0].contains(Pixel::new(64, 64)));
    }

    #[test]
    fn disk_radius_5_is_below_min_area() {
        // Raster oracle: a radius-5 disk has 81 pixels, below 160 px².
        assert_eq!(disk_mask(20, 20, 5.0).len(), 81);
        let mut params = SegmentationParams::default();
        // Without smoothing the thresholded blob is exactly the disk.
        params.gaussian_sigma = 1e-9;
        let p = disk_plane(128, 128, &[(64.0, 64.0, 5.0)], 0.8);
        assert!(segment_nuclei(&preprocess(&p, &params), &params).is_empty());
    }

    #[test]
    fn bridged_disks_are_split() {
        let params = SegmentationParams::default();
        let mut p = disk_plane(160, 100, &[(60.0, 50.0, 10.0), (100.0, 50.0, 10.0)], 0.8);
        for y in 49..=51 {
            for x in 60..=100 {
                p.set(x, y, 0.8);
            }
        }
        let nuclei = segment_nuclei(&preprocess(&p, &params), &params);
        assert_eq!(nuclei.len(), 2, "areas {:?}", nuclei.iter().map(Mask::len).collect::<Vec<_>>());
        assert!(nuclei.iter().any(|m| m.contains(Pixel::new(60, 50))));
        assert!(nuclei.iter().any(|m| m.contains(Pixel::new(100, 50))));
        assert_eq!(nuclei[0].intersection_len(&nuclei[1]), 0);
    }

    #[test]
    fn isolated_nucleus_gets_full_annulus() {
        let params = SegmentationParams::default();
        let nucleus = disk_mask(100, 100, 12.0);
        let cells = expand_cells(&[nucleus.clone()], &params, 200, 200, "t");
        let c = &cells[0];
        assert_eq!(c.cell.len(), c.nucleus.len() + c.cytoplasm.len());
        for p in c.cytoplasm.pixels() {
            let d = nucleus
                .pixels()
                .iter()
                .map(|q| (((p.x as f64 - q.x as f64).powi(2) + (p.y as f64 - q.y as f64).powi(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d > 0.0 && d <= 20.0);
        }
        // Ring reaches 20 px past the nucleus edge along the axis.
        assert!(c.cell.contains(Pixel::new(132, 100)));
        assert!(!c.cell.contains(Pixel::new(133, 100)));
    }

    #[test]
    fn edge_nucleus_is_clipped() {
        let params = SegmentationParams::default();
        let nucleus = disk_mask(5, 5, 5.0);
        let cells = expand_cells(&[nucleus], &params, 50, 40, "t");
        assert!(cells[0].cell.pixels().iter().all(|p| p.x < 50 && p.y < 40));
    }

    #[test]
    fn label_png_round_trip() {
        let params = SegmentationParams::default();
        let nuclei = vec![disk_mask(30, 30, 8.0), disk_mask(60, 35, 9.0)];
        let cells = expand_cells(&nuclei, &params, 100, 80, "roi");
        let dir = tempfile::tempdir().unwrap();
        let (np, cp) = (dir.path().join("n.png"), dir.path().join("c.png"));
        write_label_png(&np, &cells, 100, 80, true).unwrap();
        write_label_png(&cp, &cells, 100, 80, false).unwrap();
        let (w, h, back) = read_label_pngs(&np, &cp, params.pixel_size, "roi").unwrap();
        assert_eq!((w, h), (100, 80));
        assert_eq!(back, cells);
    }

    #[test]
    fn geojson_rings_are_closed_and_ccw() {
        let params = SegmentationParams::default();
        let cells = expand_cells(&[disk_mask(30, 30, 8.0)], &params, 80, 80, "roi");
        let gj = cells_to_geojson(&cells, 0.25);
        let feats = gj["features"].as_array().unwrap();
        assert_eq!(feats.len(), 2);
        for f in feats {
            let ring = f["geometry"]["coordinates"][0].as_array().unwrap();
            assert_eq!(ring.first(), ring.last());
            let pts: Vec<(f64, f64)> = ring[..ring.len() - 1]
                .iter()
                .map(|v| (v[0].as_f64().unwrap(), v[1].as_f64().unwrap()))
                .collect();
            assert!(contour::signed_area(&pts) > 0.0);
        }
    }
}
