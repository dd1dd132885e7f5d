//! Fixed-grid patches over an ROI and the per-patch aggregate descriptor.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{split_name, FEATURE_NAMES, N_FEATURES};

pub const DEFAULT_PATCH_SIZE: usize = 512;
pub const DEFAULT_MIN_CELLS_PER_TYPE: usize = 10;
pub const DEFAULT_BANDWIDTHS: [f64; 5] = [16.0, 20.0, 24.0, 30.0, 34.0];
pub const STAT_NAMES: [&str; 7] = ["mean", "median", "std", "Q1", "Q3", "min", "max"];
pub const CELL_TYPES: [&str; 2] = ["tumor", "stroma"];

/// A cell as seen by the patch stage: predicted type and centroid in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchCell {
    pub cell_id: u32,
    pub tumor: bool,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub roi_id: String,
    pub row: usize,
    pub col: usize,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    /// Indices into the cell list given to [`tile_patches`].
    pub members: Vec<usize>,
    pub n_tumor: usize,
    pub n_stroma: usize,
    pub eligible: bool,
}

pub fn check_eligibility(n_tumor: usize, n_stroma: usize, min_per_type: usize) -> bool {
    n_tumor >= min_per_type && n_stroma >= min_per_type
}

/// Splits the ROI into a grid of `size`×`size` patches anchored at the origin;
/// trailing strips narrower than `size` are dropped. Cells are assigned by
/// centroid with half-open intervals.
pub fn tile_patches(
    roi_id: &str,
    width: usize,
    height: usize,
    size: usize,
    cells: &[PatchCell],
    min_per_type: usize,
) -> Result<Vec<Patch>> {
    if size == 0 || width < size || height < size {
        return Err(Error::RoiTooSmall { width, height, patch: size });
    }
    let (cols, rows) = (width / size, height / size);
    let mut patches: Vec<Patch> = (0..rows * cols)
        .map(|k| Patch {
            roi_id: roi_id.to_string(),
            row: k / cols,
            col: k % cols,
            x0: (k % cols) * size,
            y0: (k / cols) * size,
            size,
            members: Vec::new(),
            n_tumor: 0,
            n_stroma: 0,
            eligible: false,
        })
        .collect();
    for (i, c) in cells.iter().enumerate() {
        if !(c.x >= 0.0 && c.y >= 0.0) {
            continue;
        }
        let (gc, gr) = ((c.x / size as f64).floor() as usize, (c.y / size as f64).floor() as usize);
        if gc >= cols || gr >= rows {
            continue;
        }
        let p = &mut patches[gr * cols + gc];
        p.members.push(i);
        if c.tumor {
            p.n_tumor += 1;
        } else {
            p.n_stroma += 1;
        }
    }
    for p in &mut patches {
        p.eligible = check_eligibility(p.n_tumor, p.n_stroma, min_per_type);
    }
    Ok(patches)
}

fn interpolate(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// (mean, median, std, Q1, Q3, min, max) with linearly interpolated quantiles
/// and population standard deviation.
pub fn seven_stats(values: &[f64]) -> Result<[f64; 7]> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mean = (s.iter().sum::<f64>() / n).clamp(s[0], s[s.len() - 1]);
    let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok([
        mean,
        interpolate(&s, 0.5),
        std,
        interpolate(&s, 0.25),
        interpolate(&s, 0.75),
        s[0],
        s[s.len() - 1],
    ])
}

/// Gaussian density of the tumor centroids evaluated at each stroma centroid.
pub fn kde_scores(tumor: &[(f64, f64)], stroma: &[(f64, f64)], h: f64) -> Result<Vec<f64>> {
    if tumor.is_empty() {
        return Err(Error::NoTumorCells);
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParams(format!("bandwidth must be positive, got {h}")));
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * h * h * tumor.len() as f64);
    let inv = 1.0 / (2.0 * h * h);
    Ok(stroma
        .iter()
        .map(|&(sx, sy)| {
            tumor
                .iter()
                .map(|&(tx, ty)| (-((sx - tx).powi(2) + (sy - ty).powi(2)) * inv).exp())
                .sum::<f64>()
                * norm
        })
        .collect())
}

fn format_bandwidth(h: f64) -> String {
    format!("{h}")
}

/// Column names of the patch descriptor, in output order.
pub fn patch_feature_names(bandwidths: &[f64]) -> Vec<String> {
    let mut names = Vec::with_capacity(descriptor_len(bandwidths.len()));
    for ct in CELL_TYPES {
        for f in FEATURE_NAMES {
            let (comp, feat) = split_name(f);
            for st in STAT_NAMES {
                names.push(format!("{ct}_{comp}:{feat}:{st}"));
            }
        }
    }
    for &h in bandwidths {
        for st in STAT_NAMES {
            names.push(format!("interaction:KDE_h{}:{st}", format_bandwidth(h)));
        }
    }
    names
}

pub fn descriptor_len(n_bandwidths: usize) -> usize {
    N_FEATURES * CELL_TYPES.len() * STAT_NAMES.len() + n_bandwidths * STAT_NAMES.len()
}

/// Splits a descriptor column name into (content, cellular feature, statistic),
/// e.g. ("tumor_Nucleus", "Hematoxylin OD max", "Q3").
pub fn name_triple(name: &str) -> (String, String, String) {
    let mut parts = name.rsplitn(2, ':');
    let stat = parts.next().unwrap_or_default().to_string();
    let rest = parts.next().unwrap_or_default();
    match rest.split_once(':') {
        Some((content, feat)) => (content.to_string(), feat.to_string(), stat),
        None => (rest.to_string(), String::new(), stat),
    }
}

/// Aggregates member cell descriptors into the patch descriptor. `features`
/// and `cells` are indexed alike; only the patch members are used.
pub fn patch_descriptor(
    patch: &Patch,
    cells: &[PatchCell],
    features: &[Vec<f64>],
    bandwidths: &[f64],
) -> Result<Vec<f64>> {
    if !patch.eligible {
        return Err(Error::IneligiblePatch);
    }
    let mut out = Vec::with_capacity(descriptor_len(bandwidths.len()));
    for want_tumor in [true, false] {
        let rows: Vec<&Vec<f64>> = patch
            .members
            .iter()
            .filter(|&&i| cells[i].tumor == want_tumor)
            .map(|&i| &features[i])
            .collect();
        for j in 0..N_FEATURES {
            let col: Vec<f64> = rows
                .iter()
                .map(|r| {
                    r.get(j).copied().ok_or(Error::DimensionMismatch { expected: N_FEATURES, got: r.len() })
                })
                .collect::<Result<_>>()?;
            out.extend(seven_stats(&col)?);
        }
    }
    let (mut t, mut s) = (Vec::new(), Vec::new());
    for &i in &patch.members {
        let c = &cells[i];
        if c.tumor {
            t.push((c.x, c.y));
        } else {
            s.push((c.x, c.y));
        }
    }
    // Canonical order makes the floating-point sums independent of member order.
    let by_xy = |a: &(f64, f64), b: &(f64, f64)| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1));
    t.sort_by(by_xy);
    s.sort_by(by_xy);
    for &h in bandwidths {
        out.extend(seven_stats(&kde_scores(&t, &s, h)?)?);
    }
    Ok(out)
}

/// One row of the patch descriptor table.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRow {
    pub roi_id: String,
    pub grid_row: usize,
    pub grid_col: usize,
    pub label: String,
    pub values: Vec<f64>,
}

pub fn write_patch_csv(path: &Path, names: &[String], rows: &[PatchRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    let mut header = vec!["roi_id".to_string(), "grid_row".into(), "grid_col".into(), "label".into()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        if r.values.len() != names.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: r.values.len() });
        }
        let mut rec = vec![r.roi_id.clone(), r.grid_row.to_string(), r.grid_col.to_string(), r.label.clone()];
        // Shortest round-trip representation keeps the file lossless.
        rec.extend(r.values.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_patch_csv(path: &Path) -> Result<(Vec<String>, Vec<PatchRow>)> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 4 || &header[0] != "roi_id" {
        return Err(Error::Parse(format!("unexpected patch CSV header in {}", path.display())));
    }
    let names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let values = rec
            .iter()
            .skip(4)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(PatchRow {
            roi_id: rec[0].to_string(),
            grid_row: num(&rec[1])?,
            grid_col: num(&rec[2])?,
            label: rec[3].to_string(),
            values,
        });
    }
    Ok((names, rows))
}
