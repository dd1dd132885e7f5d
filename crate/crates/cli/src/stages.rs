//! The pipeline stages. Each reads the files written by earlier stages and
//! writes its own output directory from scratch.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ovpath_core::annotation::{assign_labels, AnnotationSet, CellLabel, LabelSource};
use ovpath_core::classify::correlation::{average_linkage, pearson_matrix, reorder};
use ovpath_core::classify::kmeans::kmeans;
use ovpath_core::classify::svm::{svm_train, SvmOptions};
use ovpath_core::classify::{confusion, feature_importance, standardize_fit_apply, LinearModel, Matrix, ModelKind};
use ovpath_core::evaluate::{histogram, roc_auc, subject_bootstrap, write_roc_csv, SubjectCall};
use ovpath_core::features::{compute_features, degenerate_sidecar, read_feature_csv, write_feature_csv, FEATURE_NAMES};
use ovpath_core::io::{load_plane, read_png_gray16, save_plane};
use ovpath_core::lasso::{lasso_select, write_selection_table};
use ovpath_core::patch::{patch_descriptor, patch_feature_names, read_patch_csv, tile_patches, write_patch_csv, PatchCell, PatchRow};
use ovpath_core::segment::{cells_to_geojson, read_label_pngs, segment_cells, write_label_png};
use ovpath_core::stain::{self, rgb_to_od, RgbTile, DEFAULT_WHITE};
use ovpath_core::synth::{generate_cohort, CohortManifest, Histotype, RoiEntry};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::overlay::emit_overlay;
use crate::run::{Context, Stage};

const TUMOR: &str = "tumor";
const STROMA: &str = "stroma";

fn failure(stage: Stage, e: impl std::fmt::Display) -> CliError {
    CliError::StageFailure { stage: stage.name(), message: e.to_string() }
}

fn csv_writer(stage: Stage, path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| failure(stage, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| failure(stage, e))?;
    fs::write(path, text + "\n").map_err(|e| failure(stage, format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(ctx: &Context, stage: Stage, path: &Path) -> CliResult<T> {
    ctx.require(stage, path)?;
    let text = fs::read_to_string(path).map_err(|e| failure(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| failure(stage, format!("{}: {e}", path.display())))
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn histotype_of(ctx: &Context, stage: Stage) -> CliResult<BTreeMap<String, RoiEntry>> {
    Ok(ctx.rois(stage)?.into_iter().map(|r| (r.roi_id.clone(), r)).collect())
}

// File layout of the per-ROI stages.

fn hema_path(ctx: &Context, roi: &str) -> PathBuf {
    ctx.stage_dir(Stage::Deconvolve).join(format!("{roi}.hema.png"))
}
fn eosin_path(ctx: &Context, roi: &str) -> PathBuf {
    ctx.stage_dir(Stage::Deconvolve).join(format!("{roi}.eosin.png"))
}
fn nuclei_path(ctx: &Context, roi: &str) -> PathBuf {
    ctx.stage_dir(Stage::Segment).join(format!("{roi}.nuclei.png"))
}
fn cells_path(ctx: &Context, roi: &str) -> PathBuf {
    ctx.stage_dir(Stage::Segment).join(format!("{roi}.cells.png"))
}
fn labels_path(ctx: &Context, roi: &str) -> PathBuf {
    ctx.stage_dir(Stage::Label).join(format!("{roi}.csv"))
}
fn features_path(ctx: &Context, roi: &str) -> PathBuf {
    ctx.stage_dir(Stage::Features).join(format!("{roi}.csv"))
}
fn cell_pred_path(ctx: &Context, roi: &str) -> PathBuf {
    ctx.stage_dir(Stage::PredictCell).join(format!("{roi}.csv"))
}
fn cell_model_path(ctx: &Context) -> PathBuf {
    ctx.stage_dir(Stage::TrainCell).join("model.json")
}
fn split_path(ctx: &Context) -> PathBuf {
    ctx.stage_dir(Stage::TrainCell).join("split.json")
}
fn patches_path(ctx: &Context) -> PathBuf {
    ctx.stage_dir(Stage::Patchify).join("patches.csv")
}
fn patch_model_path(ctx: &Context) -> PathBuf {
    ctx.stage_dir(Stage::TrainPatch).join("model.json")
}
fn cv_decisions_path(ctx: &Context) -> PathBuf {
    ctx.stage_dir(Stage::TrainPatch).join("cv_decisions.csv")
}
fn subjects_json_path(ctx: &Context) -> PathBuf {
    ctx.stage_dir(Stage::Subjects).join("subjects.json")
}

fn require_all(ctx: &Context, stage: Stage, paths: impl IntoIterator<Item = PathBuf>) -> CliResult<()> {
    for p in paths {
        ctx.require(stage, &p)?;
    }
    Ok(())
}

pub fn synth(ctx: &Context) -> CliResult<()> {
    let st = Stage::Synth;
    let spec = ctx.cfg.cohort_spec();
    let root = ctx.cohort();
    if let Ok(existing) = CohortManifest::load(root) {
        if existing.spec == spec && existing.verify(root).map(|bad| bad.is_empty()).unwrap_or(false) {
            log::info!("cohort at {} matches the requested spec; reusing it", root.display());
            return Ok(());
        }
    }
    let m = generate_cohort(&spec, root).map_err(|e| failure(st, e))?;
    log::info!("generated {} ROIs in {}", m.rois.len(), root.display());
    Ok(())
}

pub fn deconvolve(ctx: &Context) -> CliResult<()> {
    let st = Stage::Deconvolve;
    let rois = ctx.rois(st)?;
    require_all(ctx, st, rois.iter().map(|r| ctx.cohort().join(&r.image)))?;
    let stains = ctx.cfg.stains()?;
    ctx.clean_stage_dir(st)?;
    let ps = ctx.cfg.cohort.pixel_size;
    rois.par_iter().try_for_each(|r| -> CliResult<()> {
        let tile = RgbTile::load(&ctx.cohort().join(&r.image), ps).map_err(|e| failure(st, e))?;
        let planes = stain::deconvolve(&rgb_to_od(&tile, DEFAULT_WHITE), &stains).map_err(|e| failure(st, e))?;
        save_plane(&hema_path(ctx, &r.roi_id), &planes.hema).map_err(|e| failure(st, e))?;
        save_plane(&eosin_path(ctx, &r.roi_id), &planes.eosin).map_err(|e| failure(st, e))
    })
}

pub fn segment(ctx: &Context) -> CliResult<()> {
    let st = Stage::Segment;
    let rois = ctx.rois(st)?;
    require_all(ctx, st, rois.iter().map(|r| hema_path(ctx, &r.roi_id)))?;
    let dir = ctx.clean_stage_dir(st)?;
    let params = &ctx.cfg.segmentation;
    let counts: Vec<(String, usize)> = rois
        .par_iter()
        .map(|r| -> CliResult<(String, usize)> {
            let hema = load_plane(&hema_path(ctx, &r.roi_id)).map_err(|e| failure(st, e))?;
            let cells = segment_cells(&hema, params, &r.roi_id);
            let (w, h) = (hema.width, hema.height);
            write_label_png(&nuclei_path(ctx, &r.roi_id), &cells, w, h, true).map_err(|e| failure(st, e))?;
            write_label_png(&cells_path(ctx, &r.roi_id), &cells, w, h, false).map_err(|e| failure(st, e))?;
            let gj = cells_to_geojson(&cells, params.pixel_size);
            let text = serde_json::to_string(&gj).map_err(|e| failure(st, e))?;
            fs::write(dir.join(format!("{}.geojson", r.roi_id)), text).map_err(|e| failure(st, e))?;
            Ok((r.roi_id.clone(), cells.len()))
        })
        .collect::<CliResult<_>>()?;
    let mut w = csv_writer(st, &dir.join("counts.csv"))?;
    w.write_record(["roi_id", "n_cells"]).map_err(|e| failure(st, e))?;
    for (roi, n) in counts {
        w.write_record([roi, n.to_string()]).map_err(|e| failure(st, e))?;
    }
    w.flush().map_err(|e| failure(st, e))
}

fn source_str(s: LabelSource) -> &'static str {
    match s {
        LabelSource::Polygon => "polygon",
        LabelSource::Point => "point",
        LabelSource::None => "none",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelSidecar {
    roi_id: String,
    parse_warnings: Vec<String>,
    points_outside_cells: usize,
    conflicting_points: usize,
    labeled_by_polygon: usize,
    labeled_by_point: usize,
    unlabeled: usize,
}

/// One row of a per-ROI label table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell_id: u32,
    /// Nucleus centroid in µm.
    pub x: f64,
    pub y: f64,
    pub label: CellLabel,
}

fn read_labels(ctx: &Context, st: Stage, roi: &str) -> CliResult<Vec<CellRecord>> {
    let p = labels_path(ctx, roi);
    ctx.require(st, &p)?;
    let mut r = csv::Reader::from_path(&p).map_err(|e| failure(st, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| failure(st, e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| failure(st, format!("{}: {e}", p.display())));
        out.push(CellRecord {
            cell_id: rec[0].parse().map_err(|e| failure(st, format!("{}: {e}", p.display())))?,
            x: num(1)?,
            y: num(2)?,
            label: rec[3].parse().map_err(|e| failure(st, e))?,
        });
    }
    Ok(out)
}

pub fn label(ctx: &Context) -> CliResult<()> {
    let st = Stage::Label;
    let rois = ctx.rois(st)?;
    require_all(
        ctx,
        st,
        rois.iter().flat_map(|r| [nuclei_path(ctx, &r.roi_id), cells_path(ctx, &r.roi_id), ctx.cohort().join(&r.annotations)]),
    )?;
    let dir = ctx.clean_stage_dir(st)?;
    let ps = ctx.cfg.segmentation.pixel_size;
    rois.par_iter().try_for_each(|r| -> CliResult<()> {
        let (_, _, cells) = read_label_pngs(&nuclei_path(ctx, &r.roi_id), &cells_path(ctx, &r.roi_id), ps, &r.roi_id)
            .map_err(|e| failure(st, e))?;
        let ann = AnnotationSet::load(&ctx.cohort().join(&r.annotations)).map_err(|e| failure(st, e))?;
        let (labels, report) = assign_labels(&cells, &ann, ps);
        let mut w = csv_writer(st, &labels_path(ctx, &r.roi_id))?;
        w.write_record(["cell_id", "x_um", "y_um", "label", "source"]).map_err(|e| failure(st, e))?;
        for (c, l) in cells.iter().zip(&labels) {
            w.write_record([c.id.to_string(), f(c.centroid.0), f(c.centroid.1), l.label.as_str().into(), source_str(l.source).into()])
                .map_err(|e| failure(st, e))?;
        }
        w.flush().map_err(|e| failure(st, e))?;
        if !ann.warnings.is_empty() {
            log::warn!("{}: {} annotation warnings", r.roi_id, ann.warnings.len());
        }
        let side = LabelSidecar {
            roi_id: r.roi_id.clone(),
            parse_warnings: ann.warnings,
            points_outside_cells: report.points_outside_cells,
            conflicting_points: report.conflicting_points,
            labeled_by_polygon: report.labeled_by_polygon,
            labeled_by_point: report.labeled_by_point,
            unlabeled: report.unlabeled,
        };
        write_json(st, &dir.join(format!("{}.json", r.roi_id)), &side)
    })
}

pub fn features(ctx: &Context) -> CliResult<()> {
    let st = Stage::Features;
    let rois = ctx.rois(st)?;
    require_all(
        ctx,
        st,
        rois.iter().flat_map(|r| {
            [
                nuclei_path(ctx, &r.roi_id),
                cells_path(ctx, &r.roi_id),
                labels_path(ctx, &r.roi_id),
                hema_path(ctx, &r.roi_id),
                eosin_path(ctx, &r.roi_id),
            ]
        }),
    )?;
    let dir = ctx.clean_stage_dir(st)?;
    let ps = ctx.cfg.segmentation.pixel_size;
    rois.par_iter().try_for_each(|r| -> CliResult<()> {
        let (_, _, cells) = read_label_pngs(&nuclei_path(ctx, &r.roi_id), &cells_path(ctx, &r.roi_id), ps, &r.roi_id)
            .map_err(|e| failure(st, e))?;
        let records = read_labels(ctx, st, &r.roi_id)?;
        let by_id: BTreeMap<u32, CellLabel> = records.iter().map(|c| (c.cell_id, c.label)).collect();
        let labels: Vec<CellLabel> = cells.iter().map(|c| by_id.get(&c.id).copied().unwrap_or(CellLabel::Unlabeled)).collect();
        let hema = load_plane(&hema_path(ctx, &r.roi_id)).map_err(|e| failure(st, e))?;
        let eosin = load_plane(&eosin_path(ctx, &r.roi_id)).map_err(|e| failure(st, e))?;
        let rows = compute_features(&cells, &labels, &hema, &eosin, ps).map_err(|e| failure(st, e))?;
        write_feature_csv(&features_path(ctx, &r.roi_id), &rows).map_err(|e| failure(st, e))?;
        write_json(st, &dir.join(format!("{}.degenerate.json", r.roi_id)), &degenerate_sidecar(&rows))
    })
}

/// Feature rows of one ROI as (cell id, label, values); ids follow file order.
fn read_features(ctx: &Context, st: Stage, roi: &str) -> CliResult<Vec<(u32, CellLabel, Vec<f64>)>> {
    let p = features_path(ctx, roi);
    ctx.require(st, &p)?;
    let rows = read_feature_csv(&p).map_err(|e| failure(st, e))?;
    Ok(rows.into_iter().enumerate().map(|(i, (l, v))| (i as u32 + 1, l, v)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSplit {
    pub train: Vec<String>,
    pub held_out: Vec<String>,
}

fn cell_split(ctx: &Context, rois: &[RoiEntry]) -> CellSplit {
    let k = ctx.cfg.cell_train_rois_per_subject;
    let (train, held_out): (Vec<&RoiEntry>, Vec<&RoiEntry>) = rois.iter().partition(|r| r.roi < k);
    CellSplit {
        train: train.into_iter().map(|r| r.roi_id.clone()).collect(),
        held_out: held_out.into_iter().map(|r| r.roi_id.clone()).collect(),
    }
}

fn labeled_rows(rows: Vec<(u32, CellLabel, Vec<f64>)>) -> impl Iterator<Item = (u32, bool, Vec<f64>)> {
    rows.into_iter().filter_map(|(id, l, v)| match l {
        CellLabel::Tumor => Some((id, true, v)),
        CellLabel::Stroma => Some((id, false, v)),
        CellLabel::Unlabeled => None,
    })
}

fn importance_csv(st: Stage, path: &Path, names: &[String], weights: &[f64]) -> CliResult<()> {
    let mut w = csv_writer(st, path)?;
    w.write_record(["feature", "importance"]).map_err(|e| failure(st, e))?;
    for (n, v) in feature_importance(names, weights) {
        w.write_record([n, f(v)]).map_err(|e| failure(st, e))?;
    }
    w.flush().map_err(|e| failure(st, e))
}

pub fn train_cell(ctx: &Context) -> CliResult<()> {
    let st = Stage::TrainCell;
    let rois = ctx.rois(st)?;
    let split = cell_split(ctx, &rois);
    require_all(ctx, st, split.train.iter().map(|r| features_path(ctx, r)))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for roi in &split.train {
        for (_, tumor, v) in labeled_rows(read_features(ctx, st, roi)?) {
            xs.push(v);
            ys.push(if tumor { 1.0 } else { -1.0 });
        }
    }
    let dir = ctx.clean_stage_dir(st)?;
    let x = Matrix::from_rows(&xs).map_err(|e| failure(st, e))?;
    let (z, std) = standardize_fit_apply(&x).map_err(|e| failure(st, e))?;
    let opts = SvmOptions { c: ctx.cfg.svm_c, ..Default::default() };
    let sol = svm_train(&z, &ys, &opts).map_err(|e| failure(st, e))?;
    log::info!("cell SVM: {} training cells, {} iterations, KKT gap {:.2e}", ys.len(), sol.iterations, sol.kkt_violation);
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut model = LinearModel::from_parts(ModelKind::Svm, names.clone(), &std, sol.weights, sol.bias, (TUMOR, STROMA), ctx.cfg.seed);
    model.hyperparams.insert("C".into(), ctx.cfg.svm_c);
    model.hyperparams.insert("n_train".into(), ys.len() as f64);
    model.save(&cell_model_path(ctx)).map_err(|e| failure(st, e))?;
    importance_csv(st, &dir.join("importance.csv"), &names, &model.weights)?;
    write_json(st, &split_path(ctx), &split)
}

pub fn predict_cell(ctx: &Context) -> CliResult<()> {
    let st = Stage::PredictCell;
    let rois = ctx.rois(st)?;
    ctx.require(st, &cell_model_path(ctx))?;
    require_all(
        ctx,
        st,
        rois.iter().flat_map(|r| [features_path(ctx, &r.roi_id), labels_path(ctx, &r.roi_id), nuclei_path(ctx, &r.roi_id)]),
    )?;
    let model = LinearModel::load(&cell_model_path(ctx)).map_err(|e| failure(st, e))?;
    let dir = ctx.clean_stage_dir(st)?;
    let overlays = dir.join("overlays");
    fs::create_dir_all(&overlays).map_err(|e| failure(st, e))?;
    let ps = ctx.cfg.segmentation.pixel_size;
    rois.par_iter().try_for_each(|r| -> CliResult<()> {
        let feats = read_features(ctx, st, &r.roi_id)?;
        let recs = read_labels(ctx, st, &r.roi_id)?;
        if feats.len() != recs.len() {
            return Err(failure(st, format!("{}: {} feature rows for {} cells", r.roi_id, feats.len(), recs.len())));
        }
        let mut w = csv_writer(st, &cell_pred_path(ctx, &r.roi_id))?;
        w.write_record(["cell_id", "x_px", "y_px", "label", "decision", "predicted"]).map_err(|e| failure(st, e))?;
        let mut classes = BTreeMap::new();
        for ((id, _, v), rec) in feats.iter().zip(&recs) {
            let d = model.decision(v).map_err(|e| failure(st, e))?;
            let tumor = d > 0.0;
            classes.insert(*id, if tumor { CellLabel::Tumor } else { CellLabel::Stroma });
            w.write_record([
                id.to_string(),
                f(rec.x / ps),
                f(rec.y / ps),
                rec.label.as_str().to_string(),
                f(d),
                (if tumor { TUMOR } else { STROMA }).to_string(),
            ])
            .map_err(|e| failure(st, e))?;
        }
        w.flush().map_err(|e| failure(st, e))?;
        let tile = RgbTile::load(&ctx.cohort().join(&r.image), ps).map_err(|e| failure(st, e))?;
        let (_, _, raster) = read_png_gray16(&nuclei_path(ctx, &r.roi_id)).map_err(|e| failure(st, e))?;
        let (img, legend) = emit_overlay(&tile, &raster, &classes);
        img.save_png(&overlays.join(format!("{}.png", r.roi_id))).map_err(|e| failure(st, e))?;
        write_json(st, &overlays.join(format!("{}.json", r.roi_id)), &legend)
    })
}

/// Predicted cells of one ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction {
    pub cell_id: u32,
    pub x_px: f64,
    pub y_px: f64,
    pub label: CellLabel,
    pub decision: f64,
    pub tumor: bool,
}

pub fn read_cell_predictions(ctx: &Context, st: Stage, roi: &str) -> CliResult<Vec<CellPrediction>> {
    let p = cell_pred_path(ctx, roi);
    ctx.require(st, &p)?;
    let mut r = csv::Reader::from_path(&p).map_err(|e| failure(st, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| failure(st, e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| failure(st, format!("{}: {e}", p.display())));
        out.push(CellPrediction {
            cell_id: rec[0].parse().map_err(|e| failure(st, format!("{}: {e}", p.display())))?,
            x_px: num(1)?,
            y_px: num(2)?,
            label: rec[3].parse().map_err(|e| failure(st, e))?,
            decision: num(4)?,
            tumor: &rec[5] == TUMOR,
        });
    }
    Ok(out)
}

pub fn patchify(ctx: &Context) -> CliResult<()> {
    let st = Stage::Patchify;
    let cm = ctx.cohort_manifest(st)?;
    require_all(ctx, st, cm.rois.iter().flat_map(|r| [cell_pred_path(ctx, &r.roi_id), features_path(ctx, &r.roi_id)]))?;
    let dir = ctx.clean_stage_dir(st)?;
    let cfg = &ctx.cfg;
    let (w, h) = (cm.spec.roi_width, cm.spec.roi_height);
    type Eligibility = (String, usize, usize, usize, usize, bool);
    let per_roi: Vec<(Vec<PatchRow>, Vec<Eligibility>)> = cm
        .rois
        .par_iter()
        .map(|r| -> CliResult<_> {
            let preds = read_cell_predictions(ctx, st, &r.roi_id)?;
            let feats = read_features(ctx, st, &r.roi_id)?;
            if feats.len() != preds.len() {
                return Err(failure(st, format!("{}: {} feature rows for {} predictions", r.roi_id, feats.len(), preds.len())));
            }
            let cells: Vec<PatchCell> =
                preds.iter().map(|p| PatchCell { cell_id: p.cell_id, tumor: p.tumor, x: p.x_px, y: p.y_px }).collect();
            let values: Vec<Vec<f64>> = feats.into_iter().map(|(_, _, v)| v).collect();
            let patches = tile_patches(&r.roi_id, w, h, cfg.patch_size, &cells, cfg.min_cells_per_type).map_err(|e| failure(st, e))?;
            let mut rows = Vec::new();
            let mut elig = Vec::new();
            for p in &patches {
                elig.push((r.roi_id.clone(), p.row, p.col, p.n_tumor, p.n_stroma, p.eligible));
                if p.eligible {
                    let v = patch_descriptor(p, &cells, &values, &cfg.bandwidths).map_err(|e| failure(st, e))?;
                    rows.push(PatchRow {
                        roi_id: r.roi_id.clone(),
                        grid_row: p.row,
                        grid_col: p.col,
                        label: r.class.as_str().to_string(),
                        values: v,
                    });
                }
            }
            Ok((rows, elig))
        })
        .collect::<CliResult<_>>()?;
    let names = patch_feature_names(&cfg.bandwidths);
    let rows: Vec<PatchRow> = per_roi.iter().flat_map(|(r, _)| r.iter().cloned()).collect();
    write_patch_csv(&patches_path(ctx), &names, &rows).map_err(|e| failure(st, e))?;
    let mut wr = csv_writer(st, &dir.join("eligibility.csv"))?;
    wr.write_record(["roi_id", "grid_row", "grid_col", "n_tumor", "n_stroma", "eligible"]).map_err(|e| failure(st, e))?;
    for (roi, row, col, nt, ns, ok) in per_roi.iter().flat_map(|(_, e)| e.iter()) {
        wr.write_record([roi.clone(), row.to_string(), col.to_string(), nt.to_string(), ns.to_string(), ok.to_string()])
            .map_err(|e| failure(st, e))?;
    }
    wr.flush().map_err(|e| failure(st, e))?;
    log::info!("{} eligible patches", rows.len());
    Ok(())
}

/// Stratified subject folds: within each histotype, subjects in sorted order
/// are dealt to folds round-robin.
pub fn subject_folds(subjects: &BTreeMap<String, Histotype>, k: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for class in Histotype::ALL {
        for (i, s) in subjects.iter().filter(|(_, c)| **c == class).map(|(s, _)| s).enumerate() {
            out.insert(s.clone(), i % k);
        }
    }
    out
}

struct PatchData {
    rows: Vec<PatchRow>,
    subject: Vec<String>,
    y: Vec<f64>,
    x: Matrix,
    names: Vec<String>,
}

fn load_patches(ctx: &Context, st: Stage) -> CliResult<PatchData> {
    let rois = histotype_of(ctx, st)?;
    ctx.require(st, &patches_path(ctx))?;
    let (names, rows) = read_patch_csv(&patches_path(ctx)).map_err(|e| failure(st, e))?;
    let mut subject = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for r in &rows {
        let e = rois.get(&r.roi_id).ok_or_else(|| failure(st, format!("patch of unknown ROI {}", r.roi_id)))?;
        subject.push(e.subject_id.clone());
        y.push(if e.class == Histotype::Hgsoc { 1.0 } else { -1.0 });
    }
    let values: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let x = Matrix::from_rows(&values).map_err(|e| failure(st, e))?;
    Ok(PatchData { rows, subject, y, x, names })
}

fn fit_svm(st: Stage, x: &Matrix, y: &[f64], c: f64, names: Vec<String>, seed: u64) -> CliResult<LinearModel> {
    let (z, std) = standardize_fit_apply(x).map_err(|e| failure(st, e))?;
    let sol = svm_train(&z, y, &SvmOptions { c, ..Default::default() }).map_err(|e| failure(st, format!("SVM: {e}")))?;
    let mut m = LinearModel::from_parts(ModelKind::Svm, names, &std, sol.weights, sol.bias, ("HGSOC", "SBOT"), seed);
    m.hyperparams.insert("C".into(), c);
    m.hyperparams.insert("n_train".into(), y.len() as f64);
    Ok(m)
}

pub fn train_patch(ctx: &Context) -> CliResult<()> {
    let st = Stage::TrainPatch;
    let data = load_patches(ctx, st)?;
    let dir = ctx.clean_stage_dir(st)?;
    let cfg = &ctx.cfg;
    let subjects: BTreeMap<String, Histotype> = histotype_of(ctx, st)?
        .into_values()
        .map(|r| (r.subject_id, r.class))
        .collect();

    // Out-of-fold decisions with subjects grouped into folds.
    let folds = subject_folds(&subjects, cfg.patch_folds);
    let fold_of: Vec<usize> = data.subject.iter().map(|s| folds[s]).collect();
    let n = data.rows.len();
    let mut decision = vec![0.0; n];
    let mut distance = vec![0.0; n];
    for k in 0..cfg.patch_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
        if test.is_empty() {
            continue;
        }
        let yt: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
        let m = fit_svm(st, &data.x.select_rows(&train), &yt, cfg.svm_c, data.names.clone(), cfg.seed)?;
        for &i in &test {
            decision[i] = m.decision(data.x.row(i)).map_err(|e| failure(st, e))?;
            distance[i] = m.distance(data.x.row(i)).map_err(|e| failure(st, e))?;
        }
    }
    let mut w = csv_writer(st, &cv_decisions_path(ctx))?;
    w.write_record(["roi_id", "grid_row", "grid_col", "subject_id", "label", "fold", "decision", "distance"])
        .map_err(|e| failure(st, e))?;
    for i in 0..n {
        let r = &data.rows[i];
        w.write_record([
            r.roi_id.clone(),
            r.grid_row.to_string(),
            r.grid_col.to_string(),
            data.subject[i].clone(),
            r.label.clone(),
            fold_of[i].to_string(),
            f(decision[i]),
            f(distance[i]),
        ])
        .map_err(|e| failure(st, e))?;
    }
    w.flush().map_err(|e| failure(st, e))?;

    let model = fit_svm(st, &data.x, &data.y, cfg.svm_c, data.names.clone(), cfg.seed)?;
    model.save(&patch_model_path(ctx)).map_err(|e| failure(st, e))?;
    importance_csv(st, &dir.join("importance.csv"), &data.names, &model.weights)?;

    // Sparse selection on standardized descriptors, folds grouped by subject.
    let (z, std) = standardize_fit_apply(&data.x).map_err(|e| failure(st, e))?;
    let lasso_folds = subject_folds(&subjects, cfg.lasso.n_folds);
    let lf: Vec<usize> = data.subject.iter().map(|s| lasso_folds[s]).collect();
    let sel = lasso_select(&z, &data.y, &lf, &cfg.lasso).map_err(|e| failure(st, format!("LASSO: {e}")))?;
    log::info!("lasso: λ = {:.4e}, {} nonzero", sel.lambda, sel.beta.iter().filter(|b| **b != 0.0).count());
    let lm = sel.to_model(data.names.clone(), &std, ("HGSOC", "SBOT"), cfg.seed);
    lm.save(&dir.join("lasso_model.json")).map_err(|e| failure(st, e))?;
    write_json(st, &dir.join("lasso.json"), &sel)?;
    write_selection_table(&dir.join("table2.csv"), &data.names, &sel.beta).map_err(|e| failure(st, e))
}

pub fn predict_patch(ctx: &Context) -> CliResult<()> {
    let st = Stage::PredictPatch;
    ctx.require(st, &patch_model_path(ctx))?;
    let data = load_patches(ctx, st)?;
    let model = LinearModel::load(&patch_model_path(ctx)).map_err(|e| failure(st, e))?;
    let dir = ctx.clean_stage_dir(st)?;
    let mut w = csv_writer(st, &dir.join("decisions.csv"))?;
    w.write_record(["roi_id", "grid_row", "grid_col", "subject_id", "label", "decision", "distance", "predicted"])
        .map_err(|e| failure(st, e))?;
    for (i, r) in data.rows.iter().enumerate() {
        let d = model.decision(&r.values).map_err(|e| failure(st, e))?;
        let dist = model.distance(&r.values).map_err(|e| failure(st, e))?;
        w.write_record([
            r.roi_id.clone(),
            r.grid_row.to_string(),
            r.grid_col.to_string(),
            data.subject[i].clone(),
            r.label.clone(),
            f(d),
            f(dist),
            model.predict_label(&r.values).map_err(|e| failure(st, e))?.to_string(),
        ])
        .map_err(|e| failure(st, e))?;
    }
    w.flush().map_err(|e| failure(st, e))
}

/// Out-of-fold patch decisions: (subject, true label, decision, distance).
fn read_cv_decisions(ctx: &Context, st: Stage) -> CliResult<Vec<(String, String, f64, f64)>> {
    let p = cv_decisions_path(ctx);
    ctx.require(st, &p)?;
    let mut r = csv::Reader::from_path(&p).map_err(|e| failure(st, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| failure(st, e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| failure(st, format!("{}: {e}", p.display())));
        out.push((rec[3].to_string(), rec[4].to_string(), num(6)?, num(7)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject_id: String,
    pub truth: String,
    /// `None` when the subject has no eligible patch.
    pub call: Option<SubjectCall>,
}

impl SubjectResult {
    pub fn predicted(&self) -> &str {
        match &self.call {
            Some(c) if c.positive => "HGSOC",
            Some(_) => "SBOT",
            None => "none",
        }
    }
}

pub fn subjects(ctx: &Context) -> CliResult<()> {
    let st = Stage::Subjects;
    let rows = read_cv_decisions(ctx, st)?;
    let all: BTreeMap<String, Histotype> =
        histotype_of(ctx, st)?.into_values().map(|r| (r.subject_id, r.class)).collect();
    let dir = ctx.clean_stage_dir(st)?;
    let mut per: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, _, _, dist) in &rows {
        per.entry(s.as_str()).or_default().push(*dist);
    }
    let mut results = Vec::new();
    for (s, class) in &all {
        let call = match per.get(s.as_str()) {
            Some(d) => Some(subject_bootstrap(s, d, ctx.cfg.bootstrap_replicates, ctx.cfg.seed).map_err(|e| failure(st, e))?),
            None => {
                log::warn!("subject {s} has no eligible patches");
                None
            }
        };
        results.push(SubjectResult { subject_id: s.clone(), truth: class.as_str().to_string(), call });
    }
    write_json(st, &subjects_json_path(ctx), &results)?;
    let mut w = csv_writer(st, &dir.join("subject_calls.csv"))?;
    w.write_record(["subject_id", "n_patches", "fraction_positive", "predicted", "true"]).map_err(|e| failure(st, e))?;
    for r in &results {
        let (n, fp) = r.call.as_ref().map_or((0, f64::NAN), |c| (c.n_patches, c.fraction_positive));
        w.write_record([r.subject_id.clone(), n.to_string(), f(fp), r.predicted().to_string(), r.truth.clone()])
            .map_err(|e| failure(st, e))?;
    }
    w.flush().map_err(|e| failure(st, e))
}

pub fn load_subject_calls(ctx: &Context) -> CliResult<Vec<SubjectCall>> {
    let results: Vec<SubjectResult> = read_json(ctx, Stage::Subjects, &subjects_json_path(ctx))?;
    Ok(results.into_iter().filter_map(|r| r.call).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cell_accuracy: f64,
    pub cell_accuracy_by_histotype: BTreeMap<String, f64>,
    pub n_cells_held_out: u64,
    pub n_misclassified: usize,
    pub patch_accuracy: f64,
    pub patch_auc: f64,
    pub n_eligible_patches: usize,
    pub subjects_correct: usize,
    pub subjects_total: usize,
    pub lasso_nonzero: usize,
}

fn class_index(label: &str, positive: &str) -> usize {
    usize::from(label != positive)
}

pub fn report(ctx: &Context) -> CliResult<()> {
    let st = Stage::Report;
    let rois = histotype_of(ctx, st)?;
    let split: CellSplit = read_json(ctx, st, &split_path(ctx))?;
    let model = {
        ctx.require(st, &cell_model_path(ctx))?;
        LinearModel::load(&cell_model_path(ctx)).map_err(|e| failure(st, e))?
    };
    let table2 = ctx.stage_dir(Stage::TrainPatch).join("table2.csv");
    let subject_csv = ctx.stage_dir(Stage::Subjects).join("subject_calls.csv");
    require_all(ctx, st, [table2.clone(), subject_csv.clone(), ctx.stage_dir(Stage::TrainCell).join("importance.csv")])?;
    let cv = read_cv_decisions(ctx, st)?;
    let subjects: Vec<SubjectResult> = read_json(ctx, st, &subjects_json_path(ctx))?;
    let lasso: ovpath_core::lasso::LassoSelection = read_json(ctx, st, &ctx.stage_dir(Stage::TrainPatch).join("lasso.json"))?;
    let dir = ctx.clean_stage_dir(st)?;
    let fail = |e: ovpath_core::Error| failure(st, e);

    // Cell level, on held-out ROIs.
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    let mut by_class: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    let mut wrong: Vec<(String, u32, bool, f64, Vec<f64>)> = Vec::new();
    for roi in &split.held_out {
        let class = rois.get(roi).ok_or_else(|| failure(st, format!("unknown ROI {roi}")))?.class.as_str();
        let preds = read_cell_predictions(ctx, st, roi)?;
        let feats = read_features(ctx, st, roi)?;
        for (p, (_, _, v)) in preds.iter().zip(feats) {
            let t = match p.label {
                CellLabel::Tumor => true,
                CellLabel::Stroma => false,
                CellLabel::Unlabeled => continue,
            };
            let (ti, pi) = (usize::from(!t), usize::from(!p.tumor));
            truth.push(ti);
            pred.push(pi);
            let e = by_class.entry(class).or_default();
            e.0.push(ti);
            e.1.push(pi);
            if t != p.tumor {
                wrong.push((roi.clone(), p.cell_id, t, p.decision, v));
            }
        }
    }
    let cell_cm = confusion(&truth, &pred, [TUMOR, STROMA]).map_err(fail)?;
    cell_cm.write_csv(&dir.join("cell_confusion.csv")).map_err(fail)?;
    let mut cell_by_class = BTreeMap::new();
    for (class, (t, p)) in &by_class {
        let cm = confusion(t, p, [TUMOR, STROMA]).map_err(fail)?;
        cm.write_csv(&dir.join(format!("cell_confusion_{class}.csv"))).map_err(fail)?;
        cell_by_class.insert(class.to_string(), cm.accuracy());
    }
    fs::copy(ctx.stage_dir(Stage::TrainCell).join("importance.csv"), dir.join("cell_importance.csv")).map_err(|e| failure(st, e))?;

    // Misclassified cells grouped in standardized feature space.
    let mut w = csv_writer(st, &dir.join("misclassified.csv"))?;
    w.write_record(["roi_id", "cell_id", "true", "predicted", "decision", "cluster", "representative"])
        .map_err(|e| failure(st, e))?;
    if !wrong.is_empty() {
        let rows: Vec<Vec<f64>> = wrong
            .iter()
            .map(|(_, _, _, _, v)| v.iter().enumerate().map(|(j, x)| (x - model.standardize_mean[j]) / model.standardize_std[j]).collect())
            .collect();
        let cl = kmeans(&Matrix::from_rows(&rows).map_err(fail)?, ctx.cfg.misclassified_clusters, ctx.cfg.seed);
        let reps: BTreeSet<usize> = cl.representatives.iter().flatten().copied().collect();
        for (i, (roi, id, t, d, _)) in wrong.iter().enumerate() {
            let (tl, pl) = if *t { (TUMOR, STROMA) } else { (STROMA, TUMOR) };
            w.write_record([roi.clone(), id.to_string(), tl.into(), pl.into(), f(*d), cl.assignment[i].to_string(), reps.contains(&i).to_string()])
                .map_err(|e| failure(st, e))?;
        }
    }
    w.flush().map_err(|e| failure(st, e))?;

    // Feature inter-correlation over the training cells.
    let mut xs = Vec::new();
    for roi in &split.train {
        xs.extend(labeled_rows(read_features(ctx, st, roi)?).map(|(_, _, v)| v));
    }
    let r = pearson_matrix(&Matrix::from_rows(&xs).map_err(fail)?).map_err(fail)?;
    let (merges, order) = average_linkage(&r);
    let re = reorder(&r, &order);
    let mut w = csv_writer(st, &dir.join("correlation.csv"))?;
    let mut header = vec!["feature".to_string()];
    header.extend(order.iter().map(|&i| FEATURE_NAMES[i].to_string()));
    w.write_record(&header).map_err(|e| failure(st, e))?;
    for (row, &i) in re.iter().zip(&order) {
        let mut rec = vec![FEATURE_NAMES[i].to_string()];
        rec.extend(row.iter().map(|v| f(*v)));
        w.write_record(&rec).map_err(|e| failure(st, e))?;
    }
    w.flush().map_err(|e| failure(st, e))?;
    let mut w = csv_writer(st, &dir.join("dendrogram.csv"))?;
    w.write_record(["step", "left", "right", "height"]).map_err(|e| failure(st, e))?;
    for (k, m) in merges.iter().enumerate() {
        let names = |v: &[usize]| v.iter().map(|&i| FEATURE_NAMES[i]).collect::<Vec<_>>().join("|");
        w.write_record([(k + 1).to_string(), names(&m.left), names(&m.right), f(m.height)]).map_err(|e| failure(st, e))?;
    }
    w.flush().map_err(|e| failure(st, e))?;

    // Patch level, out-of-fold.
    let pt: Vec<usize> = cv.iter().map(|(_, l, _, _)| class_index(l, "HGSOC")).collect();
    let pp: Vec<usize> = cv.iter().map(|(_, _, d, _)| usize::from(*d <= 0.0)).collect();
    let patch_cm = confusion(&pt, &pp, ["HGSOC", "SBOT"]).map_err(fail)?;
    patch_cm.write_csv(&dir.join("patch_confusion.csv")).map_err(fail)?;
    let decisions: Vec<f64> = cv.iter().map(|c| c.2).collect();
    let positive: Vec<bool> = pt.iter().map(|&t| t == 0).collect();
    let (roc, auc) = roc_auc(&decisions, &positive).map_err(fail)?;
    write_roc_csv(&dir.join("roc.csv"), &roc).map_err(fail)?;
    let dist = |class: &str| cv.iter().filter(|c| c.1 == class).map(|c| c.3).collect::<Vec<f64>>();
    let (dh, ds) = (dist("HGSOC"), dist("SBOT"));
    histogram(&[("HGSOC", &dh), ("SBOT", &ds)], ctx.cfg.histogram_bins)
        .map_err(fail)?
        .write_csv(&dir.join("histogram.csv"))
        .map_err(fail)?;
    fs::copy(&table2, dir.join("table2.csv")).map_err(|e| failure(st, e))?;

    // Subject level.
    fs::copy(&subject_csv, dir.join("subject_calls.csv")).map_err(|e| failure(st, e))?;
    let called: Vec<&SubjectResult> = subjects.iter().filter(|s| s.call.is_some()).collect();
    let st_truth: Vec<usize> = called.iter().map(|s| class_index(&s.truth, "HGSOC")).collect();
    let st_pred: Vec<usize> = called.iter().map(|s| class_index(s.predicted(), "HGSOC")).collect();
    confusion(&st_truth, &st_pred, ["HGSOC", "SBOT"]).map_err(fail)?.write_csv(&dir.join("subject_confusion.csv")).map_err(fail)?;
    let subjects_correct = subjects.iter().filter(|s| s.predicted() == s.truth).count();

    let summary = Summary {
        cell_accuracy: cell_cm.accuracy(),
        cell_accuracy_by_histotype: cell_by_class,
        n_cells_held_out: cell_cm.total(),
        n_misclassified: wrong.len(),
        patch_accuracy: patch_cm.accuracy(),
        patch_auc: auc,
        n_eligible_patches: cv.len(),
        subjects_correct,
        subjects_total: subjects.len(),
        lasso_nonzero: lasso.beta.iter().filter(|b| **b != 0.0).count(),
    };
    log::info!(
        "cell accuracy {:.4}, patch accuracy {:.4} (AUC {:.4}), subjects {}/{}",
        summary.cell_accuracy,
        summary.patch_accuracy,
        summary.patch_auc,
        summary.subjects_correct,
        summary.subjects_total
    );
    write_json(st, &dir.join("summary.json"), &summary)
}
