//! Stage registry, output layout, run manifest and timings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use ovpath_core::evaluate::SubjectCall;
use ovpath_core::io::sha256_file;
use ovpath_core::synth::{CohortManifest, RoiEntry};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::stages;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Stage {
    Synth,
    Deconvolve,
    Segment,
    Label,
    Features,
    TrainCell,
    PredictCell,
    Patchify,
    TrainPatch,
    PredictPatch,
    Subjects,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Synth,
        Stage::Deconvolve,
        Stage::Segment,
        Stage::Label,
        Stage::Features,
        Stage::TrainCell,
        Stage::PredictCell,
        Stage::Patchify,
        Stage::TrainPatch,
        Stage::PredictPatch,
        Stage::Subjects,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Deconvolve => "deconvolve",
            Stage::Segment => "segment",
            Stage::Label => "label",
            Stage::Features => "features",
            Stage::TrainCell => "train-cell",
            Stage::PredictCell => "predict-cell",
            Stage::Patchify => "patchify",
            Stage::TrainPatch => "train-patch",
            Stage::PredictPatch => "predict-patch",
            Stage::Subjects => "subjects",
            Stage::Report => "report",
        }
    }

    /// Output directory name under the run directory (synth writes the cohort instead).
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Synth => "cohort",
            Stage::Deconvolve => "deconv",
            Stage::Segment => "segment",
            Stage::Label => "labels",
            Stage::Features => "features",
            Stage::TrainCell => "cell_model",
            Stage::PredictCell => "cell_pred",
            Stage::Patchify => "patches",
            Stage::TrainPatch => "patch_model",
            Stage::PredictPatch => "patch_pred",
            Stage::Subjects => "subjects",
            Stage::Report => "report",
        }
    }
}

/// Resolved configuration plus path helpers shared by all stages.
pub struct Context {
    pub cfg: PipelineConfig,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn cohort(&self) -> &Path {
        &self.cfg.cohort_dir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Synth => self.cfg.cohort_dir.clone(),
            s => self.cfg.output_dir.join(s.dir_name()),
        }
    }

    /// Fresh (emptied) output directory for a stage.
    pub fn clean_stage_dir(&self, stage: Stage) -> CliResult<PathBuf> {
        let d = self.stage_dir(stage);
        let fail = |e: std::io::Error| CliError::StageFailure { stage: stage.name(), message: format!("{}: {e}", d.display()) };
        if d.exists() {
            fs::remove_dir_all(&d).map_err(fail)?;
        }
        fs::create_dir_all(&d).map_err(fail)?;
        Ok(d)
    }

    pub fn require(&self, stage: Stage, path: &Path) -> CliResult<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::MissingInput { stage: stage.name(), path: path.to_path_buf() })
        }
    }

    pub fn cohort_manifest(&self, stage: Stage) -> CliResult<CohortManifest> {
        let p = self.cohort().join(CohortManifest::FILE_NAME);
        self.require(stage, &p)?;
        CohortManifest::load(self.cohort()).map_err(CliError::stage(stage.name()))
    }

    pub fn rois(&self, stage: Stage) -> CliResult<Vec<RoiEntry>> {
        Ok(self.cohort_manifest(stage)?.rois)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: PipelineConfig,
    /// Cohort files with their content hashes.
    pub inputs: BTreeMap<String, String>,
    /// Stage name → (relative output path → content hash).
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
    /// Subject calls with every bootstrap replicate mean.
    pub subjects: Vec<SubjectCall>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap_or(&p);
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let hash = sha256_file(&p).map_err(|e| std::io::Error::other(e.to_string()))?;
            out.insert(key, hash);
        }
    }
    Ok(())
}

/// Content hashes of every file below `dir`, keyed by path relative to `root`.
pub fn hash_tree(root: &Path, dir: &Path) -> std::io::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if dir.exists() {
        walk(root, dir, &mut out)?;
    }
    Ok(out)
}

fn update_manifest(ctx: &Context, stage: Stage) -> CliResult<()> {
    let fail = |m: String| CliError::StageFailure { stage: stage.name(), message: m };
    let path = ctx.out().join(MANIFEST_FILE);
    let mut m = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str::<RunManifest>(&text).ok(),
        Err(_) => None,
    }
    .filter(|m| m.config == ctx.cfg)
    .unwrap_or_else(|| RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: ctx.cfg.clone(),
        inputs: BTreeMap::new(),
        stages: BTreeMap::new(),
        subjects: Vec::new(),
    });
    if let Ok(cm) = CohortManifest::load(ctx.cohort()) {
        m.inputs = cm.files;
        let mh = sha256_file(&ctx.cohort().join(CohortManifest::FILE_NAME)).map_err(|e| fail(e.to_string()))?;
        m.inputs.insert(CohortManifest::FILE_NAME.to_string(), mh);
    }
    let hashes = if stage == Stage::Synth {
        m.inputs.clone()
    } else {
        hash_tree(ctx.out(), &ctx.stage_dir(stage)).map_err(|e| fail(e.to_string()))?
    };
    m.stages.insert(stage.name().to_string(), hashes);
    if stage == Stage::Subjects {
        m.subjects = stages::load_subject_calls(ctx)?;
    }
    fs::create_dir_all(ctx.out()).map_err(|e| fail(e.to_string()))?;
    let text = serde_json::to_string_pretty(&m).map_err(|e| fail(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| fail(e.to_string()))
}

fn record_timing(ctx: &Context, stage: Stage, seconds: f64) -> CliResult<()> {
    let path = ctx.out().join(TIMINGS_FILE);
    let mut t: BTreeMap<String, f64> =
        fs::read_to_string(&path).ok().and_then(|s| serde_json::from_str(&s).ok()).unwrap_or_default();
    t.insert(stage.name().to_string(), seconds);
    let fail = |e: String| CliError::StageFailure { stage: stage.name(), message: e };
    fs::create_dir_all(ctx.out()).map_err(|e| fail(e.to_string()))?;
    fs::write(&path, serde_json::to_string_pretty(&t).map_err(|e| fail(e.to_string()))? + "\n")
        .map_err(|e| fail(e.to_string()))
}

/// Runs one stage and records its output hashes and wall-clock time.
pub fn run_stage(ctx: &Context, stage: Stage) -> CliResult<()> {
    log::info!("stage {} started", stage.name());
    let t0 = Instant::now();
    match stage {
        Stage::Synth => stages::synth(ctx),
        Stage::Deconvolve => stages::deconvolve(ctx),
        Stage::Segment => stages::segment(ctx),
        Stage::Label => stages::label(ctx),
        Stage::Features => stages::features(ctx),
        Stage::TrainCell => stages::train_cell(ctx),
        Stage::PredictCell => stages::predict_cell(ctx),
        Stage::Patchify => stages::patchify(ctx),
        Stage::TrainPatch => stages::train_patch(ctx),
        Stage::PredictPatch => stages::predict_patch(ctx),
        Stage::Subjects => stages::subjects(ctx),
        Stage::Report => stages::report(ctx),
    }?;
    let secs = t0.elapsed().as_secs_f64();
    update_manifest(ctx, stage)?;
    record_timing(ctx, stage, secs)?;
    log::info!("stage {} finished in {secs:.1} s", stage.name());
    Ok(())
}

pub fn run_all(ctx: &Context) -> CliResult<()> {
    for s in Stage::ALL {
        run_stage(ctx, s)?;
    }
    Ok(())
}
