//! Per-cell morphology and stain intensity descriptors.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::annotation::CellLabel;
use crate::contour;
use crate::error::{Error, Result};
use crate::plane::{Mask, Plane};
use crate::segment::CellObject;

pub const N_FEATURES: usize = 41;

/// Column names of the cell descriptor, in output order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "Nucleus: Area",
    "Nucleus: Perimeter",
    "Nucleus: Circularity",
    "Nucleus: Max caliper",
    "Nucleus: Min caliper",
    "Nucleus: Eccentricity",
    "Nucleus: Hematoxylin OD mean",
    "Nucleus: Hematoxylin OD sum",
    "Nucleus: Hematoxylin OD std dev",
    "Nucleus: Hematoxylin OD max",
    "Nucleus: Hematoxylin OD min",
    "Nucleus: Hematoxylin OD range",
    "Nucleus: Eosin OD mean",
    "Nucleus: Eosin OD sum",
    "Nucleus: Eosin OD std dev",
    "Nucleus: Eosin OD max",
    "Nucleus: Eosin OD min",
    "Nucleus: Eosin OD range",
    "Cell: Area",
    "Cell: Perimeter",
    "Cell: Circularity",
    "Cell: Max caliper",
    "Cell: Min caliper",
    "Cell: Eccentricity",
    "Cell: Hematoxylin OD mean",
    "Cell: Hematoxylin OD std dev",
    "Cell: Hematoxylin OD max",
    "Cell: Hematoxylin OD min",
    "Cell: Eosin OD mean",
    "Cell: Eosin OD std dev",
    "Cell: Eosin OD max",
    "Cell: Eosin OD min",
    "Cytoplasm: Hematoxylin OD mean",
    "Cytoplasm: Hematoxylin OD std dev",
    "Cytoplasm: Hematoxylin OD max",
    "Cytoplasm: Hematoxylin OD min",
    "Cytoplasm: Eosin OD mean",
    "Cytoplasm: Eosin OD std dev",
    "Cytoplasm: Eosin OD max",
    "Cytoplasm: Eosin OD min",
    "Nucleus/Cell area ratio",
];

/// Index of the first cytoplasm statistic; the eight cytoplasm values follow.
pub const CYTOPLASM_START: usize = 32;

/// Splits a feature name into (compartment, measurement). The area ratio is
/// filed under the cell compartment.
pub fn split_name(name: &str) -> (&str, &str) {
    match name.split_once(": ") {
        Some((c, f)) => (c, f),
        None => ("Cell", name),
    }
}

/// Douglas-Peucker tolerance (pixels) applied to the traced contour before
/// measuring its length. Removes the staircase excess of the raw chain code.
pub const CONTOUR_SIMPLIFY_EPS: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFeatures {
    pub area: f64,
    pub perimeter: f64,
    pub circularity: f64,
    pub max_caliper: f64,
    pub min_caliper: f64,
    pub eccentricity: f64,
}

impl ShapeFeatures {
    pub fn to_array(self) -> [f64; 6] {
        [self.area, self.perimeter, self.circularity, self.max_caliper, self.min_caliper, self.eccentricity]
    }
}

fn eccentricity(mask: &Mask) -> f64 {
    let Some((cx, cy)) = mask.centroid() else {
        return 0.0;
    };
    let n = mask.len() as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in mask.pixels() {
        let (dx, dy) = (f64::from(p.x) - cx, f64::from(p.y) - cy);
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    let (a, b, c) = (a / n, b / n, c / n);
    let mid = (a + c) / 2.0;
    let disc = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let (l1, l2) = (mid + disc, (mid - disc).max(0.0));
    if l1 <= 0.0 {
        return 0.0;
    }
    (1.0 - l2 / l1).max(0.0).sqrt()
}

pub fn shape_features(mask: &Mask, pixel_size: f64) -> Result<ShapeFeatures> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let area = mask.len() as f64 * pixel_size * pixel_size;
    let body = contour::largest_component(mask, false);
    let traced = contour::moore_contour(&body);
    let simplified = contour::simplify_closed(&traced, CONTOUR_SIMPLIFY_EPS);
    let perimeter = contour::closed_length(&simplified) * pixel_size;
    let circularity = if perimeter > 0.0 {
        let c = 4.0 * std::f64::consts::PI * area / (perimeter * perimeter);
        if c > 1.05 {
            log::debug!("circularity {c:.4} above tolerance, clamped");
        }
        c.min(1.0)
    } else {
        0.0
    };
    let corners: Vec<contour::Point> = contour::outline(&body)
        .into_iter()
        .map(|(x, y)| (x as f64, y as f64))
        .collect();
    let hull = contour::convex_hull(&corners);
    let (max_c, min_c) = contour::feret_diameters(&hull);
    Ok(ShapeFeatures {
        area,
        perimeter,
        circularity,
        max_caliper: max_c * pixel_size,
        min_caliper: min_c * pixel_size,
        eccentricity: eccentricity(mask),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityStats {
    pub mean: f64,
    pub sum: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub range: f64,
}

pub fn intensity_stats(values: impl IntoIterator<Item = f64>) -> Result<IntensityStats> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = v.len() as f64;
    let sum: f64 = v.iter().sum();
    let mean = sum / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    // Summation rounding can push the mean a hair outside [min, max].
    let mean = mean.clamp(min, max);
    Ok(IntensityStats { mean, sum, std: var.sqrt(), max, min, range: max - min })
}

/// Statistics of `plane` over `mask`: (mean, sum, std, max, min, range) when
/// `with_sum_range`, otherwise (mean, std, max, min).
pub fn intensity_features(mask: &Mask, plane: &Plane, with_sum_range: bool) -> Result<Vec<f64>> {
    let s = intensity_stats(mask.pixels().iter().map(|p| plane.get(p.x as usize, p.y as usize)))?;
    Ok(if with_sum_range {
        vec![s.mean, s.sum, s.std, s.max, s.min, s.range]
    } else {
        vec![s.mean, s.std, s.max, s.min]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatureVector {
    pub cell_id: u32,
    pub label: CellLabel,
    pub values: Vec<f64>,
    pub degenerate_cytoplasm: bool,
}

pub fn cell_feature_vector(
    cell: &CellObject,
    label: CellLabel,
    hema: &Plane,
    eosin: &Plane,
    pixel_size: f64,
) -> Result<CellFeatureVector> {
    let mut values = Vec::with_capacity(N_FEATURES);
    let nucleus_shape = shape_features(&cell.nucleus, pixel_size)?;
    values.extend(nucleus_shape.to_array());
    values.extend(intensity_features(&cell.nucleus, hema, true)?);
    values.extend(intensity_features(&cell.nucleus, eosin, true)?);
    let cell_shape = shape_features(&cell.cell, pixel_size)?;
    values.extend(cell_shape.to_array());
    values.extend(intensity_features(&cell.cell, hema, false)?);
    values.extend(intensity_features(&cell.cell, eosin, false)?);
    let degenerate = cell.cytoplasm.is_empty();
    if degenerate {
        values.extend([0.0; 8]);
    } else {
        values.extend(intensity_features(&cell.cytoplasm, hema, false)?);
        values.extend(intensity_features(&cell.cytoplasm, eosin, false)?);
    }
    values.push(nucleus_shape.area / cell_shape.area);
    debug_assert_eq!(values.len(), N_FEATURES);
    Ok(CellFeatureVector { cell_id: cell.id, label, values, degenerate_cytoplasm: degenerate })
}

/// Descriptors for all cells, ordered by cell id. `labels` is parallel to `cells`.
pub fn compute_features(
    cells: &[CellObject],
    labels: &[CellLabel],
    hema: &Plane,
    eosin: &Plane,
    pixel_size: f64,
) -> Result<Vec<CellFeatureVector>> {
    if cells.len() != labels.len() {
        return Err(Error::LengthMismatch(cells.len(), labels.len()));
    }
    let mut rows: Vec<CellFeatureVector> = cells
        .par_iter()
        .zip(labels.par_iter())
        .map(|(c, &l)| cell_feature_vector(c, l, hema, eosin, pixel_size))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.cell_id);
    Ok(rows)
}

/// Six significant digits, without exponent notation.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v == 0.0 { "0".into() } else { format!("{v}") };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn write_feature_csv(path: &Path, rows: &[CellFeatureVector]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    let mut header = vec!["label"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    let mut order: Vec<&CellFeatureVector> = rows.iter().collect();
    order.sort_by_key(|r| r.cell_id);
    for r in order {
        if r.values.len() != N_FEATURES {
            return Err(Error::DimensionMismatch { expected: N_FEATURES, got: r.values.len() });
        }
        let mut rec = vec![r.label.as_str().to_string()];
        rec.extend(r.values.iter().map(|&v| format_sig6(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature CSV back as (label, values) rows in file order.
pub fn read_feature_csv(path: &Path) -> Result<Vec<(CellLabel, Vec<f64>)>> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let header = r.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("label").chain(FEATURE_NAMES).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!("unexpected feature CSV header in {}", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let label: CellLabel = rec[0].parse()?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push((label, values));
    }
    Ok(out)
}

/// Degenerate-cytoplasm flags keyed by cell id.
pub fn degenerate_sidecar(rows: &[CellFeatureVector]) -> BTreeMap<u32, bool> {
    rows.iter().filter(|r| r.degenerate_cytoplasm).map(|r| (r.cell_id, true)).collect()
}
