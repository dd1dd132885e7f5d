//! Region and point annotations in GeoJSON, and their transfer onto cells.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::plane::Pixel;
use crate::segment::CellObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Tumor,
    Stroma,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Tumor => "tumor",
            Label::Stroma => "stroma",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tumor" => Ok(Label::Tumor),
            "stroma" => Ok(Label::Stroma),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellLabel {
    Tumor,
    Stroma,
    Unlabeled,
}

impl CellLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CellLabel::Tumor => "tumor",
            CellLabel::Stroma => "stroma",
            CellLabel::Unlabeled => "unlabeled",
        }
    }

    pub fn known(self) -> Option<Label> {
        match self {
            CellLabel::Tumor => Some(Label::Tumor),
            CellLabel::Stroma => Some(Label::Stroma),
            CellLabel::Unlabeled => None,
        }
    }
}

impl From<Label> for CellLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Tumor => CellLabel::Tumor,
            Label::Stroma => CellLabel::Stroma,
        }
    }
}

impl fmt::Display for CellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlabeled" => Ok(CellLabel::Unlabeled),
            other => other.parse::<Label>().map(Into::into),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Polygon,
    Point,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPolygon {
    /// Ring vertices in µm, without the repeated closing vertex.
    pub rings: Vec<Vec<(f64, f64)>>,
    pub label: Label,
}

impl AnnotatedPolygon {
    pub fn new(vertices: Vec<(f64, f64)>, label: Label) -> Result<Self> {
        let ring = normalize_ring(vertices)?;
        Ok(Self { rings: vec![ring], label })
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.rings.iter().filter(|r| ring_contains(r, x, y)).count() % 2 == 1
    }

    /// Even-odd area (outer ring minus holes).
    pub fn area(&self) -> f64 {
        let mut rings = self.rings.iter().map(|r| ring_area(r).abs());
        let outer = rings.next().unwrap_or(0.0);
        outer - rings.sum::<f64>()
    }
}

fn normalize_ring(mut v: Vec<(f64, f64)>) -> Result<Vec<(f64, f64)>> {
    if v.len() >= 2 && v.first() == v.last() {
        v.pop();
    }
    if v.len() < 3 {
        return Err(Error::Parse(format!("polygon ring has {} vertices, need at least 3", v.len())));
    }
    if v.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Parse("non-finite polygon coordinate".into()));
    }
    Ok(v)
}

fn ring_contains(ring: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn ring_area(ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub polygons: Vec<AnnotatedPolygon>,
    pub points: Vec<((f64, f64), Label)>,
    pub roi_id: Option<String>,
    /// Recoverable format problems met while parsing.
    pub warnings: Vec<String>,
}

fn parse_pair(v: &Value, warnings: &mut Vec<String>) -> Result<(f64, f64)> {
    let a = v.as_array().ok_or_else(|| Error::Parse("coordinate is not an array".into()))?;
    if a.len() < 2 {
        return Err(Error::Parse("coordinate needs two numbers".into()));
    }
    if a.len() > 2 {
        warnings.push(format!("coordinate with {} values, extra dimensions ignored", a.len()));
    }
    let num = |i: usize| a[i].as_f64().ok_or_else(|| Error::Parse("coordinate is not numeric".into()));
    Ok((num(0)?, num(1)?))
}

fn parse_rings(v: &Value, warnings: &mut Vec<String>) -> Result<Vec<Vec<(f64, f64)>>> {
    let rings = v.as_array().ok_or_else(|| Error::Parse("polygon coordinates are not an array".into()))?;
    if rings.is_empty() {
        return Err(Error::Parse("polygon without rings".into()));
    }
    rings
        .iter()
        .map(|r| {
            let pts = r.as_array().ok_or_else(|| Error::Parse("ring is not an array".into()))?;
            let v: Vec<(f64, f64)> = pts.iter().map(|p| parse_pair(p, warnings)).collect::<Result<_>>()?;
            if v.first() != v.last() {
                warnings.push("polygon ring is not closed".into());
            }
            let ring = normalize_ring(v)?;
            if ring_area(&ring) == 0.0 {
                warnings.push("polygon ring has zero area".into());
            }
            Ok(ring)
        })
        .collect()
}

impl AnnotationSet {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_value(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_value(doc: &Value) -> Result<Self> {
        if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(Error::Parse("document is not a FeatureCollection".into()));
        }
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse("FeatureCollection without features array".into()))?;
        let mut set = AnnotationSet::default();
        for f in features {
            let props = f.get("properties").ok_or_else(|| Error::Parse("feature without properties".into()))?;
            let label: Label = props
                .get("label")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Parse("feature without string label".into()))?
                .parse()?;
            if let Some(r) = props.get("roi_id").and_then(Value::as_str) {
                match &set.roi_id {
                    None => set.roi_id = Some(r.to_string()),
                    Some(first) if first != r => set.warnings.push(format!("roi_id {r:?} differs from {first:?}")),
                    _ => {}
                }
            }
            let geom = f.get("geometry").ok_or_else(|| Error::Parse("feature without geometry".into()))?;
            let coords = geom.get("coordinates").ok_or_else(|| Error::Parse("geometry without coordinates".into()))?;
            let w = &mut set.warnings;
            match geom.get("type").and_then(Value::as_str) {
                Some("Polygon") => set.polygons.push(AnnotatedPolygon { rings: parse_rings(coords, w)?, label }),
                Some("MultiPolygon") => {
                    let parts = coords.as_array().ok_or_else(|| Error::Parse("bad MultiPolygon".into()))?;
                    for p in parts {
                        set.polygons.push(AnnotatedPolygon { rings: parse_rings(p, w)?, label });
                    }
                }
                Some("Point") => set.points.push((parse_pair(coords, w)?, label)),
                Some("MultiPoint") => {
                    let pts = coords.as_array().ok_or_else(|| Error::Parse("bad MultiPoint".into()))?;
                    for p in pts {
                        set.points.push((parse_pair(p, w)?, label));
                    }
                }
                other => return Err(Error::Parse(format!("unsupported geometry {other:?}"))),
            }
        }
        Ok(set)
    }

    pub fn to_value(&self) -> Value {
        let props = |label: Label| {
            let mut p = json!({ "label": label.as_str() });
            if let Some(r) = &self.roi_id {
                p["roi_id"] = json!(r);
            }
            p
        };
        let mut features = Vec::new();
        for poly in &self.polygons {
            let rings: Vec<Vec<[f64; 2]>> = poly
                .rings
                .iter()
                .map(|r| r.iter().chain(r.first()).map(|&(x, y)| [x, y]).collect())
                .collect();
            features.push(json!({
                "type": "Feature",
                "properties": props(poly.label),
                "geometry": { "type": "Polygon", "coordinates": rings }
            }));
        }
        for &((x, y), label) in &self.points {
            features.push(json!({
                "type": "Feature",
                "properties": props(label),
                "geometry": { "type": "Point", "coordinates": [x, y] }
            }));
        }
        json!({ "type": "FeatureCollection", "features": features })
    }

    /// Label of the innermost (smallest area) polygon containing the point.
    pub fn polygon_label(&self, x: f64, y: f64) -> Option<Label> {
        self.polygons
            .iter()
            .filter(|p| p.contains(x, y))
            .map(|p| (p.area(), p.label))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, l)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCell {
    pub cell_id: u32,
    pub label: CellLabel,
    pub source: LabelSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub points_outside_cells: usize,
    pub conflicting_points: usize,
    pub labeled_by_polygon: usize,
    pub labeled_by_point: usize,
    pub unlabeled: usize,
}

/// Labels each cell from the innermost polygon containing its nucleus centroid;
/// points inside a cell mask override the polygon label. When several points
/// with different labels hit one cell the majority wins, ties going to tumor.
pub fn assign_labels(cells: &[CellObject], ann: &AnnotationSet, pixel_size: f64) -> (Vec<LabeledCell>, AssignmentReport) {
    let mut report = AssignmentReport::default();
    // votes[cell index] = (tumor, stroma)
    let mut votes = vec![(0usize, 0usize); cells.len()];
    for &((x, y), label) in &ann.points {
        let (px, py) = ((x / pixel_size).floor(), (y / pixel_size).floor());
        let hit = if px >= 0.0 && py >= 0.0 && px <= u32::MAX as f64 && py <= u32::MAX as f64 {
            let p = Pixel::new(px as u32, py as u32);
            cells.iter().position(|c| c.cell.contains(p))
        } else {
            None
        };
        match hit {
            Some(i) => match label {
                Label::Tumor => votes[i].0 += 1,
                Label::Stroma => votes[i].1 += 1,
            },
            None => report.points_outside_cells += 1,
        }
    }

    let labeled: Vec<LabeledCell> = cells
        .par_iter()
        .zip(votes.par_iter())
        .map(|(c, &(t, s))| {
            let (label, source) = if t + s > 0 {
                let l = if s > t { CellLabel::Stroma } else { CellLabel::Tumor };
                (l, LabelSource::Point)
            } else if let Some(l) = ann.polygon_label(c.centroid.0, c.centroid.1) {
                (l.into(), LabelSource::Polygon)
            } else {
                (CellLabel::Unlabeled, LabelSource::None)
            };
            LabeledCell { cell_id: c.id, label, source }
        })
        .collect();

    report.conflicting_points = votes.iter().filter(|(t, s)| *t > 0 && *s > 0).count();
    for l in &labeled {
        match l.source {
            LabelSource::Polygon => report.labeled_by_polygon += 1,
            LabelSource::Point => report.labeled_by_point += 1,
            LabelSource::None => report.unlabeled += 1,
        }
    }
    if report.points_outside_cells > 0 {
        log::warn!("{} annotation points fall outside every cell", report.points_outside_cells);
    }
    (labeled, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::Mask;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<(f64, f64)> {
        vec![(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]
    }

    fn cell(id: u32, x0: u32, y0: u32, size: u32) -> CellObject {
        let px: Vec<Pixel> = (y0..y0 + size).flat_map(|y| (x0..x0 + size).map(move |x| Pixel::new(x, y))).collect();
        let mask = Mask::new(px);
        let (cx, cy) = mask.centroid().unwrap();
        CellObject {
            id,
            nucleus: mask.clone(),
            cytoplasm: Mask::default(),
            cell: mask,
            centroid: ((cx + 0.5) * 0.25, (cy + 0.5) * 0.25),
            tile_id: "r".into(),
        }
    }

    #[test]
    fn parse_single_polygon() {
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"label":"tumor"},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10],[0,0]]]}}]}"#;
        let set = AnnotationSet::parse(doc).unwrap();
        assert_eq!(set.polygons.len(), 1);
        assert!(set.points.is_empty());
        assert_eq!(set.polygons[0].rings[0].len(), 4);
        assert_eq!(set.polygons[0].label, Label::Tumor);
    }

    #[test]
    fn parse_empty_collection() {
        let set = AnnotationSet::parse(r#"{"type":"FeatureCollection","features":[]}"#).unwrap();
        assert_eq!(set, AnnotationSet::default());
    }

    #[test]
    fn unknown_label_rejected() {
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"label":"vessel"},
            "geometry":{"type":"Point","coordinates":[1,2]}}]}"#;
        assert!(matches!(AnnotationSet::parse(doc), Err(Error::UnknownLabel(l)) if l == "vessel"));
    }

    #[test]
    fn malformed_documents_rejected() {
        assert!(matches!(AnnotationSet::parse("{"), Err(Error::Parse(_))));
        assert!(matches!(AnnotationSet::parse(r#"{"type":"Feature"}"#), Err(Error::Parse(_))));
        let two_vertices = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"label":"tumor"},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,0]]]}}]}"#;
        assert!(matches!(AnnotationSet::parse(two_vertices), Err(Error::Parse(_))));
    }

    #[test]
    fn geojson_round_trip() {
        let set = AnnotationSet {
            polygons: vec![AnnotatedPolygon::new(square(0.0, 0.0, 5.0), Label::Stroma).unwrap()],
            points: vec![((1.5, 2.5), Label::Tumor)],
            roi_id: Some("roi_1".into()),
            warnings: Vec::new(),
        };
        let back = AnnotationSet::from_value(&set.to_value()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn recoverable_problems_warn() {
        let doc = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"label":"tumor","roi_id":"a"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10]]]}},
            {"type":"Feature","properties":{"label":"stroma","roi_id":"b"},
             "geometry":{"type":"Point","coordinates":[1,2,3]}}]}"#;
        let set = AnnotationSet::parse(doc).unwrap();
        assert_eq!(set.warnings.len(), 3, "{:?}", set.warnings);
        assert_eq!(set.polygons[0].rings[0].len(), 4);
    }

    #[test]
    fn polygon_label_without_points() {
        let c = cell(1, 8, 8, 8);
        let ann = AnnotationSet {
            polygons: vec![AnnotatedPolygon::new(square(0.0, 0.0, 10.0), Label::Tumor).unwrap()],
            ..Default::default()
        };
        let (l, rep) = assign_labels(&[c], &ann, 0.25);
        assert_eq!(l[0].label, CellLabel::Tumor);
        assert_eq!(l[0].source, LabelSource::Polygon);
        assert_eq!(rep.labeled_by_polygon, 1);
    }

    #[test]
    fn point_overrides_polygon() {
        let c = cell(1, 8, 8, 8);
        let ann = AnnotationSet {
            polygons: vec![AnnotatedPolygon::new(square(0.0, 0.0, 10.0), Label::Tumor).unwrap()],
            // pixel (10, 10) lies in the cell
            points: vec![((2.6, 2.6), Label::Stroma), ((9.0, 9.0), Label::Tumor)],
            ..Default::default()
        };
        let (l, rep) = assign_labels(&[c], &ann, 0.25);
        assert_eq!(l[0].label, CellLabel::Stroma);
        assert_eq!(l[0].source, LabelSource::Point);
        assert_eq!(rep.points_outside_cells, 1);
    }

    #[test]
    fn outside_everything_is_unlabeled() {
        let c = cell(1, 100, 100, 6);
        let ann = AnnotationSet {
            polygons: vec![AnnotatedPolygon::new(square(0.0, 0.0, 10.0), Label::Tumor).unwrap()],
            ..Default::default()
        };
        let (l, _) = assign_labels(&[c], &ann, 0.25);
        assert_eq!(l[0].label, CellLabel::Unlabeled);
        assert_eq!(l[0].source, LabelSource::None);
    }

    #[test]
    fn innermost_polygon_wins_regardless_of_order() {
        let outer = AnnotatedPolygon::new(square(0.0, 0.0, 50.0), Label::Stroma).unwrap();
        let inner = AnnotatedPolygon::new(square(1.0, 1.0, 5.0), Label::Tumor).unwrap();
        let cells = vec![cell(1, 8, 8, 8), cell(2, 120, 120, 8)];
        for polys in [vec![outer.clone(), inner.clone()], vec![inner, outer]] {
            let ann = AnnotationSet { polygons: polys, ..Default::default() };
            let (l, _) = assign_labels(&cells, &ann, 0.25);
            assert_eq!(l[0].label, CellLabel::Tumor);
            assert_eq!(l[1].label, CellLabel::Stroma);
        }
    }

    #[test]
    fn holes_follow_even_odd() {
        let mut poly = AnnotatedPolygon::new(square(0.0, 0.0, 10.0), Label::Tumor).unwrap();
        poly.rings.push(square(2.0, 2.0, 4.0));
        assert!(poly.contains(1.0, 1.0));
        assert!(!poly.contains(3.0, 3.0));
        assert!((poly.area() - 84.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_is_idempotent() {
        let cells = vec![cell(1, 8, 8, 8), cell(2, 40, 40, 8)];
        let ann = AnnotationSet {
            polygons: vec![AnnotatedPolygon::new(square(0.0, 0.0, 20.0), Label::Tumor).unwrap()],
            points: vec![((11.0, 11.0), Label::Stroma)],
            ..Default::default()
        };
        assert_eq!(assign_labels(&cells, &ann, 0.25), assign_labels(&cells, &ann, 0.25));
    }
}
