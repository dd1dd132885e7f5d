//! Deterministic synthetic H&E cohort with ground truth.
//!
//! Each ROI is built in stain-concentration space: tumor nuclei in Gaussian
//! clusters with an eosin-light cytoplasm halo, elongated stroma nuclei
//! scattered uniformly over an eosin background. The concentration planes are
//! mixed through the stain basis and converted to 8-bit RGB.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::{AnnotatedPolygon, AnnotationSet, Label};
use crate::contour::convex_hull;
use crate::error::{Error, Result};
use crate::io;
use crate::plane::Plane;
use crate::stain::{od_to_rgb, RgbTile, StainMatrix, DEFAULT_WHITE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Histotype {
    #[serde(rename = "HGSOC")]
    Hgsoc,
    #[serde(rename = "SBOT")]
    Sbot,
}

impl Histotype {
    pub const ALL: [Histotype; 2] = [Histotype::Hgsoc, Histotype::Sbot];

    pub fn as_str(self) -> &'static str {
        match self {
            Histotype::Hgsoc => "HGSOC",
            Histotype::Sbot => "SBOT",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "HGSOC" => Ok(Histotype::Hgsoc),
            "SBOT" => Ok(Histotype::Sbot),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Tumor population parameters of one histotype. Lengths in µm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    pub tumor_radius_mean: f64,
    pub tumor_radius_std: f64,
    /// Radii are redrawn until they exceed this value.
    pub tumor_radius_min: f64,
    /// Std of the relative elongation of tumor nuclei (0 gives circles).
    pub tumor_elongation_std: f64,
    pub tumor_hema_mean: f64,
    pub tumor_hema_std: f64,
    /// Tumor cells per mm².
    pub tumor_density: f64,
    /// Std of the Gaussian tumor clusters.
    pub cluster_sigma: f64,
}

impl ClassParams {
    pub fn hgsoc() -> Self {
        Self {
            tumor_radius_mean: 4.0,
            tumor_radius_std: 1.2,
            tumor_radius_min: 2.0,
            tumor_elongation_std: 0.15,
            tumor_hema_mean: 0.9,
            tumor_hema_std: 0.2,
            tumor_density: 2500.0,
            cluster_sigma: 25.0,
        }
    }

    pub fn sbot() -> Self {
        Self {
            tumor_radius_mean: 3.2,
            tumor_radius_std: 0.4,
            tumor_radius_min: 2.0,
            tumor_elongation_std: 0.05,
            tumor_hema_mean: 0.7,
            tumor_hema_std: 0.1,
            tumor_density: 2500.0,
            cluster_sigma: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StromaParams {
    pub semi_major: f64,
    pub semi_minor: f64,
    pub hema_mean: f64,
    pub hema_std: f64,
    /// Stroma cells per mm².
    pub density: f64,
}

impl Default for StromaParams {
    fn default() -> Self {
        Self { semi_major: 4.0, semi_minor: 1.5, hema_mean: 0.8, hema_std: 0.1, density: 1500.0 }
    }
}

/// Stain levels of the non-nuclear compartments (OD concentration units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueParams {
    pub background_eosin: f64,
    pub cytoplasm_eosin: f64,
    pub cytoplasm_hema: f64,
    /// Cytoplasm halo width around tumor nuclei (µm).
    pub cytoplasm_width: f64,
    pub nucleus_eosin: f64,
    /// Per-pixel Gaussian texture on both concentration planes.
    pub noise_std: f64,
}

impl Default for TissueParams {
    fn default() -> Self {
        Self {
            background_eosin: 0.3,
            cytoplasm_eosin: 0.12,
            cytoplasm_hema: 0.08,
            cytoplasm_width: 4.0,
            nucleus_eosin: 0.1,
            noise_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_subjects_per_class: usize,
    pub rois_per_subject: usize,
    pub roi_width: usize,
    pub roi_height: usize,
    pub pixel_size: f64,
    pub seed: u64,
    pub hgsoc: ClassParams,
    pub sbot: ClassParams,
    pub stroma: StromaParams,
    pub tissue: TissueParams,
    pub clusters_min: usize,
    pub clusters_max: usize,
    /// Minimum spacing between nucleus outlines (µm).
    pub min_gap: f64,
    pub max_attempts: usize,
    /// Largest tolerated fraction of requested cells that could not be placed.
    pub max_drop_fraction: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_subjects_per_class: 15,
            rois_per_subject: 10,
            roi_width: 1024,
            roi_height: 1024,
            pixel_size: 0.25,
            seed: 7,
            hgsoc: ClassParams::hgsoc(),
            sbot: ClassParams::sbot(),
            stroma: StromaParams::default(),
            tissue: TissueParams::default(),
            clusters_min: 4,
            clusters_max: 6,
            min_gap: 1.0,
            max_attempts: 100,
            max_drop_fraction: 0.2,
        }
    }
}

impl CohortSpec {
    pub fn class(&self, h: Histotype) -> &ClassParams {
        match h {
            Histotype::Hgsoc => &self.hgsoc,
            Histotype::Sbot => &self.sbot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.roi_width < 512 || self.roi_height < 512 {
            return bad(format!("ROI {}x{} is below 512 px", self.roi_width, self.roi_height));
        }
        if !(self.pixel_size > 0.0) {
            return bad("pixel_size must be positive".into());
        }
        if self.n_subjects_per_class == 0 || self.rois_per_subject == 0 {
            return bad("cohort must contain subjects and ROIs".into());
        }
        for (name, c) in [("hgsoc", &self.hgsoc), ("sbot", &self.sbot)] {
            if !(c.tumor_radius_mean > 0.0 && c.tumor_radius_min > 0.0 && c.tumor_radius_std >= 0.0) {
                return bad(format!("{name}: radii must be positive"));
            }
            if !(c.tumor_density > 0.0) || !(c.cluster_sigma > 0.0) {
                return bad(format!("{name}: density and cluster_sigma must be positive"));
            }
            if c.tumor_hema_std < 0.0 || c.tumor_elongation_std < 0.0 {
                return bad(format!("{name}: standard deviations must be non-negative"));
            }
        }
        let s = &self.stroma;
        if !(s.semi_major > 0.0 && s.semi_minor > 0.0 && s.density > 0.0 && s.hema_std >= 0.0) {
            return bad("stroma: axes and density must be positive".into());
        }
        if self.clusters_min == 0 || self.clusters_min > self.clusters_max {
            return bad("cluster count range is empty".into());
        }
        if self.tissue.noise_std < 0.0 || self.min_gap < 0.0 {
            return bad("noise_std and min_gap must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.max_drop_fraction) || self.max_attempts == 0 {
            return bad("max_drop_fraction must lie in [0, 1] and max_attempts be positive".into());
        }
        Ok(())
    }

    /// ROI area in mm².
    pub fn roi_area_mm2(&self) -> f64 {
        self.roi_width as f64 * self.roi_height as f64 * (self.pixel_size / 1000.0).powi(2)
    }
}

pub fn subject_id(class: Histotype, subject: usize) -> String {
    format!("{}_s{subject:02}", class.as_str())
}

pub fn roi_id(class: Histotype, subject: usize, roi: usize) -> String {
    format!("{}_r{roi}", subject_id(class, subject))
}

/// Ground-truth record of one rendered nucleus. Lengths in µm, position of the
/// nucleus center in µm from the ROI origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCell {
    pub id: usize,
    pub label: Label,
    pub x: f64,
    pub y: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    pub hema: f64,
    pub eosin: f64,
    /// Tumor cluster index, if any.
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub roi_id: String,
    pub class: Histotype,
    pub subject: usize,
    pub roi: usize,
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub cells: Vec<TruthCell>,
    pub clusters: Vec<(f64, f64)>,
    pub requested_tumor: usize,
    pub requested_stroma: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedRoi {
    pub tile: RgbTile,
    pub truth: GroundTruth,
    pub annotations: AnnotationSet,
    /// Planted stain concentrations.
    pub hema: Plane,
    pub eosin: Plane,
}

fn roi_rng(seed: u64, class: Histotype, subject: usize, roi: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"roi");
    h.update(seed.to_le_bytes());
    h.update(class.as_str().as_bytes());
    h.update((subject as u64).to_le_bytes());
    h.update((roi as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    Normal::new(mean, std).expect("finite normal parameters").sample(rng)
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, min: f64) -> f64 {
    for _ in 0..1000 {
        let v = normal(rng, mean, std);
        if v > min {
            return v;
        }
    }
    min.max(mean)
}

struct Placed {
    x: f64,
    y: f64,
    reach: f64,
}

fn fits(placed: &[Placed], x: f64, y: f64, reach: f64, gap: f64) -> bool {
    placed.iter().all(|p| (p.x - x).hypot(p.y - y) >= p.reach + reach + gap)
}

/// Fraction of pixel (px, py) covered by the ellipse, by 4×4 supersampling.
fn ellipse_coverage(px: usize, py: usize, cx: f64, cy: f64, a: f64, b: f64, cos: f64, sin: f64) -> f64 {
    let mut hits = 0;
    for sy in 0..4 {
        for sx in 0..4 {
            let x = px as f64 + (sx as f64 + 0.5) / 4.0 - cx;
            let y = py as f64 + (sy as f64 + 0.5) / 4.0 - cy;
            let u = x * cos + y * sin;
            let v = -x * sin + y * cos;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                hits += 1;
            }
        }
    }
    f64::from(hits) / 16.0
}

/// Calls `f(x, y, coverage)` for every pixel the ellipse touches. Center and
/// axes in pixels.
fn raster_ellipse(w: usize, h: usize, cx: f64, cy: f64, a: f64, b: f64, angle: f64, mut f: impl FnMut(usize, usize, f64)) {
    let r = a.max(b) + 1.0;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w.saturating_sub(1));
    let y1 = ((cy + r).ceil() as usize).min(h.saturating_sub(1));
    let (sin, cos) = angle.sin_cos();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = ellipse_coverage(x, y, cx, cy, a, b, cos, sin);
            if c > 0.0 {
                f(x, y, c);
            }
        }
    }
}

/// Tumor polygon of one cluster: hull of circles around the member cells.
fn cluster_polygon(members: &[&TruthCell], margin: f64) -> Option<Vec<(f64, f64)>> {
    if members.is_empty() {
        return None;
    }
    let mut pts = Vec::with_capacity(members.len() * 16);
    for c in members {
        let r = c.semi_major + margin;
        for k in 0..16 {
            let t = k as f64 * std::f64::consts::TAU / 16.0;
            pts.push((c.x + r * t.cos(), c.y + r * t.sin()));
        }
    }
    let hull = convex_hull(&pts);
    (hull.len() >= 3).then_some(hull)
}

/// Margin (µm) by which tumor polygons extend past the outer nuclei.
const POLYGON_MARGIN: f64 = 6.0;
/// Stroma cells this close (µm) to a tumor polygon also get a point label.
const POINT_NEAR: f64 = 3.0;

fn distance_to_ring(ring: &[(f64, f64)], x: f64, y: f64) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 { (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (x - a.0 - t * dx).hypot(y - a.1 - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn generate_roi(spec: &CohortSpec, class: Histotype, subject: usize, roi: usize) -> Result<GeneratedRoi> {
    spec.validate()?;
    let mut rng = roi_rng(spec.seed, class, subject, roi);
    let cp = spec.class(class);
    let ps = spec.pixel_size;
    let (w, h) = (spec.roi_width, spec.roi_height);
    let (wu, hu) = (w as f64 * ps, h as f64 * ps);
    let area = spec.roi_area_mm2();
    let n_tumor = (cp.tumor_density * area).round() as usize;
    let n_stroma = (spec.stroma.density * area).round() as usize;

    let n_clusters = rng.random_range(spec.clusters_min..=spec.clusters_max);
    let edge = cp.cluster_sigma.min(wu / 4.0).min(hu / 4.0);
    let clusters: Vec<(f64, f64)> =
        (0..n_clusters).map(|_| (rng.random_range(edge..wu - edge), rng.random_range(edge..hu - edge))).collect();

    let mut placed: Vec<Placed> = Vec::with_capacity(n_tumor + n_stroma);
    let mut cells: Vec<TruthCell> = Vec::with_capacity(n_tumor + n_stroma);
    let mut dropped = 0usize;
    let gap = spec.min_gap;

    for _ in 0..n_tumor {
        let r = truncated_normal(&mut rng, cp.tumor_radius_mean, cp.tumor_radius_std, cp.tumor_radius_min);
        let elong = 1.0 + normal(&mut rng, 0.0, cp.tumor_elongation_std).abs();
        let (a, b) = (r * elong.sqrt(), r / elong.sqrt());
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let amp = normal(&mut rng, cp.tumor_hema_mean, cp.tumor_hema_std).clamp(0.2, 2.0);
        let k = rng.random_range(0..n_clusters);
        let mut ok = None;
        for _ in 0..spec.max_attempts {
            let x = normal(&mut rng, clusters[k].0, cp.cluster_sigma);
            let y = normal(&mut rng, clusters[k].1, cp.cluster_sigma);
            let m = a + gap;
            if x < m || y < m || x > wu - m || y > hu - m {
                continue;
            }
            if fits(&placed, x, y, a, gap) {
                ok = Some((x, y));
                break;
            }
        }
        match ok {
            Some((x, y)) => {
                placed.push(Placed { x, y, reach: a });
                cells.push(TruthCell {
                    id: cells.len() + 1,
                    label: Label::Tumor,
                    x,
                    y,
                    semi_major: a,
                    semi_minor: b,
                    angle,
                    hema: amp,
                    eosin: spec.tissue.nucleus_eosin,
                    cluster: Some(k),
                });
            }
            None => dropped += 1,
        }
    }

    let sp = &spec.stroma;
    for _ in 0..n_stroma {
        let (a, b) = (sp.semi_major, sp.semi_minor);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let amp = normal(&mut rng, sp.hema_mean, sp.hema_std).clamp(0.2, 2.0);
        let mut ok = None;
        for _ in 0..spec.max_attempts {
            let m = a + gap;
            let x = rng.random_range(m..wu - m);
            let y = rng.random_range(m..hu - m);
            if fits(&placed, x, y, a, gap) {
                ok = Some((x, y));
                break;
            }
        }
        match ok {
            Some((x, y)) => {
                placed.push(Placed { x, y, reach: a });
                cells.push(TruthCell {
                    id: cells.len() + 1,
                    label: Label::Stroma,
                    x,
                    y,
                    semi_major: a,
                    semi_minor: b,
                    angle,
                    hema: amp,
                    eosin: spec.tissue.nucleus_eosin,
                    cluster: None,
                });
            }
            None => dropped += 1,
        }
    }

    let requested = n_tumor + n_stroma;
    if dropped as f64 > spec.max_drop_fraction * requested as f64 {
        return Err(Error::PlacementOverflow { placed: requested - dropped, requested });
    }

    // Concentration planes.
    let t = &spec.tissue;
    let mut cyto = vec![0.0f64; w * h];
    for c in cells.iter().filter(|c| c.label == Label::Tumor) {
        let r = (c.semi_major + t.cytoplasm_width) / ps;
        raster_ellipse(w, h, c.x / ps, c.y / ps, r, r, 0.0, |x, y, cov| {
            let v = &mut cyto[y * w + x];
            *v = v.max(cov);
        });
    }
    let mut nuc = vec![0.0f64; w * h];
    let mut nuc_amp = vec![0.0f64; w * h];
    for c in &cells {
        raster_ellipse(w, h, c.x / ps, c.y / ps, c.semi_major / ps, c.semi_minor / ps, c.angle, |x, y, cov| {
            let i = y * w + x;
            nuc[i] += cov;
            nuc_amp[i] += cov * c.hema;
        });
    }
    let noise = Normal::new(0.0, t.noise_std.max(f64::MIN_POSITIVE)).expect("valid noise");
    let mut hema = Plane::zeros(w, h);
    let mut eosin = Plane::zeros(w, h);
    for i in 0..w * h {
        let (cn, cc) = (nuc[i].min(1.0), cyto[i]);
        let h_base = cc * t.cytoplasm_hema;
        let e_base = cc * t.cytoplasm_eosin + (1.0 - cc) * t.background_eosin;
        let hv = nuc_amp[i] + (1.0 - cn) * h_base;
        let ev = cn * t.nucleus_eosin + (1.0 - cn) * e_base;
        let (nh, ne) = if t.noise_std > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
        hema.data[i] = (hv + nh).max(0.0);
        eosin.data[i] = (ev + ne).max(0.0);
    }
    let stains = StainMatrix::default();
    let mut od: [Plane; 3] = std::array::from_fn(|_| Plane::zeros(w, h));
    for i in 0..w * h {
        let v = stains.mix(hema.data[i], eosin.data[i]);
        for c in 0..3 {
            od[c].data[i] = v[c];
        }
    }
    let tile = od_to_rgb(&od, DEFAULT_WHITE, ps)?;

    let id = roi_id(class, subject, roi);
    let annotations = build_annotations(&cells, n_clusters, wu, hu, &id)?;
    let truth = GroundTruth {
        roi_id: id,
        class,
        subject,
        roi,
        width: w,
        height: h,
        pixel_size: ps,
        cells,
        clusters,
        requested_tumor: n_tumor,
        requested_stroma: n_stroma,
        dropped,
    };
    Ok(GeneratedRoi { tile, truth, annotations, hema, eosin })
}

fn build_annotations(cells: &[TruthCell], n_clusters: usize, wu: f64, hu: f64, id: &str) -> Result<AnnotationSet> {
    let mut polygons = vec![AnnotatedPolygon::new(vec![(0.0, 0.0), (wu, 0.0), (wu, hu), (0.0, hu)], Label::Stroma)?];
    for k in 0..n_clusters {
        let members: Vec<&TruthCell> = cells.iter().filter(|c| c.cluster == Some(k)).collect();
        if let Some(ring) = cluster_polygon(&members, POLYGON_MARGIN) {
            polygons.push(AnnotatedPolygon::new(ring, Label::Tumor)?);
        }
    }
    let tumor_rings: Vec<&Vec<(f64, f64)>> =
        polygons.iter().filter(|p| p.label == Label::Tumor).map(|p| &p.rings[0]).collect();
    let points = cells
        .iter()
        .filter(|c| c.label == Label::Stroma)
        .filter(|c| {
            polygons.iter().skip(1).any(|p| p.contains(c.x, c.y))
                || tumor_rings.iter().any(|r| distance_to_ring(r, c.x, c.y) <= POINT_NEAR)
        })
        .map(|c| ((c.x, c.y), Label::Stroma))
        .collect();
    Ok(AnnotationSet { polygons, points, roi_id: Some(id.to_string()), ..Default::default() })
}

/// Paths of one ROI's files relative to the cohort root.
pub fn roi_paths(class: Histotype, subject: usize, roi: usize) -> (PathBuf, PathBuf, PathBuf) {
    let dir = PathBuf::from(class.as_str()).join(format!("s{subject:02}"));
    let stem = format!("r{roi}");
    (
        dir.join(format!("{stem}.png")),
        dir.join(format!("{stem}.geojson")),
        dir.join(format!("{stem}.truth.json")),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiEntry {
    pub roi_id: String,
    pub subject_id: String,
    pub class: Histotype,
    pub subject: usize,
    pub roi: usize,
    pub image: String,
    pub annotations: String,
    pub truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub spec: CohortSpec,
    pub rois: Vec<RoiEntry>,
    /// Relative path → sha256 of every generated file.
    pub files: BTreeMap<String, String>,
}

impl CohortManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(root: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(root.join(Self::FILE_NAME))?)?)
    }

    /// Recomputes file hashes and returns the paths whose content differs.
    pub fn verify(&self, root: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (rel, hash) in &self.files {
            let p = root.join(rel);
            if !p.exists() || &io::sha256_file(&p)? != hash {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }
}

fn rel_string(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Writes every ROI of the cohort under `root` and the manifest.
pub fn generate_cohort(spec: &CohortSpec, root: &Path) -> Result<CohortManifest> {
    spec.validate()?;
    let jobs: Vec<(Histotype, usize, usize)> = Histotype::ALL
        .iter()
        .flat_map(|&c| (0..spec.n_subjects_per_class).flat_map(move |s| (0..spec.rois_per_subject).map(move |r| (c, s, r))))
        .collect();
    let written: Vec<(RoiEntry, Vec<(String, String)>)> = jobs
        .par_iter()
        .map(|&(class, subject, roi)| -> Result<_> {
            let g = generate_roi(spec, class, subject, roi)?;
            let (img, ann, truth) = roi_paths(class, subject, roi);
            fs::create_dir_all(root.join(img.parent().expect("roi path has a parent")))?;
            g.tile.save_png(&root.join(&img))?;
            fs::write(root.join(&ann), serde_json::to_string(&g.annotations.to_value())?)?;
            fs::write(root.join(&truth), serde_json::to_string(&g.truth)?)?;
            let mut hashes = Vec::new();
            for p in [&img, &ann, &truth] {
                hashes.push((rel_string(p), io::sha256_file(&root.join(p))?));
            }
            let entry = RoiEntry {
                roi_id: g.truth.roi_id.clone(),
                subject_id: subject_id(class, subject),
                class,
                subject,
                roi,
                image: rel_string(&img),
                annotations: rel_string(&ann),
                truth: rel_string(&truth),
            };
            Ok((entry, hashes))
        })
        .collect::<Result<_>>()?;
    let mut rois = Vec::with_capacity(written.len());
    let mut files = BTreeMap::new();
    for (e, hs) in written {
        rois.push(e);
        files.extend(hs);
    }
    let manifest = CohortManifest { spec: spec.clone(), rois, files };
    fs::write(root.join(CohortManifest::FILE_NAME), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
