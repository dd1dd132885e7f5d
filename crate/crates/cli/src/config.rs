//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use ovpath_core::lasso::LassoOptions;
use ovpath_core::patch::{DEFAULT_BANDWIDTHS, DEFAULT_MIN_CELLS_PER_TYPE, DEFAULT_PATCH_SIZE};
use ovpath_core::segment::SegmentationParams;
use ovpath_core::stain::StainMatrix;
use ovpath_core::synth::CohortSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cohort_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Generator settings for `synth`. Its seed is replaced by the global seed.
    pub cohort: CohortSpec,
    pub segmentation: SegmentationParams,
    /// JSON file with `hema` and `eosin` OD vectors; built-in H&E basis when absent.
    pub stain_matrix: Option<PathBuf>,
    pub svm_c: f64,
    /// ROIs `0..k` of every subject train the cell classifier; the rest are held out.
    pub cell_train_rois_per_subject: usize,
    pub misclassified_clusters: usize,
    pub lasso: LassoOptions,
    pub bandwidths: Vec<f64>,
    pub patch_size: usize,
    pub min_cells_per_type: usize,
    pub patch_folds: usize,
    pub bootstrap_replicates: usize,
    pub histogram_bins: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cohort_dir: PathBuf::from("cohort"),
            output_dir: PathBuf::from("out"),
            cohort: CohortSpec::default(),
            segmentation: SegmentationParams::default(),
            stain_matrix: None,
            svm_c: 1.0,
            cell_train_rois_per_subject: 2,
            misclassified_clusters: 10,
            lasso: LassoOptions::default(),
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
            patch_size: DEFAULT_PATCH_SIZE,
            min_cells_per_type: DEFAULT_MIN_CELLS_PER_TYPE,
            patch_folds: 5,
            bootstrap_replicates: 1000,
            histogram_bins: 50,
            seed: 7,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let mut cohort = self.cohort.clone();
        cohort.seed = self.seed;
        cohort.validate().map_err(|e| CliError::Config(format!("cohort: {e}")))?;
        self.segmentation.validate().map_err(|e| CliError::Config(format!("segmentation: {e}")))?;
        if self.segmentation.pixel_size != self.cohort.pixel_size {
            return bad("segmentation.pixel_size must equal cohort.pixel_size".into());
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return bad("svm_c must be positive".into());
        }
        if self.cell_train_rois_per_subject == 0 || self.cell_train_rois_per_subject >= self.cohort.rois_per_subject {
            return bad("cell_train_rois_per_subject must leave at least one held-out ROI per subject".into());
        }
        if self.misclassified_clusters == 0 {
            return bad("misclassified_clusters must be positive".into());
        }
        let l = &self.lasso;
        if !(l.tolerance > 0.0) || l.max_sweeps == 0 || l.n_lambdas < 2 || !(l.lambda_min_ratio > 0.0 && l.lambda_min_ratio < 1.0) || l.n_folds < 2 {
            return bad("lasso: need tolerance > 0, max_sweeps ≥ 1, n_lambdas ≥ 2, 0 < lambda_min_ratio < 1, n_folds ≥ 2".into());
        }
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return bad("bandwidths must be a nonempty list of positive values".into());
        }
        if self.patch_size == 0 || self.patch_size > self.cohort.roi_width.min(self.cohort.roi_height) {
            return bad("patch_size must be positive and fit in the ROI".into());
        }
        if self.min_cells_per_type == 0 {
            return bad("min_cells_per_type must be positive".into());
        }
        let max_folds = self.cohort.n_subjects_per_class;
        if self.patch_folds < 2 || self.patch_folds > max_folds || l.n_folds > max_folds {
            return bad("patch_folds and lasso.n_folds must lie in 2..=n_subjects_per_class".into());
        }
        if self.bootstrap_replicates == 0 || self.histogram_bins == 0 {
            return bad("bootstrap_replicates and histogram_bins must be positive".into());
        }
        if let Some(p) = &self.stain_matrix {
            StainMatrix::from_json_file(p).map_err(|e| CliError::Config(format!("stain_matrix: {e}")))?;
        }
        Ok(())
    }

    pub fn cohort_spec(&self) -> CohortSpec {
        CohortSpec { seed: self.seed, ..self.cohort.clone() }
    }

    pub fn stains(&self) -> Result<StainMatrix, CliError> {
        match &self.stain_matrix {
            Some(p) => StainMatrix::from_json_file(p).map_err(|e| CliError::Config(format!("stain_matrix: {e}"))),
            None => Ok(StainMatrix::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"sedd": 3}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
        let err = serde_json::from_str::<PipelineConfig>(r#"{"segmentation": {"sigma": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn out_of_range_rejected() {
        let c = PipelineConfig { svm_c: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { bandwidths: vec![16.0, -1.0], ..Default::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { cell_train_rois_per_subject: 10, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 11, "cohort": {"n_subjects_per_class": 5}}"#).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.cohort.n_subjects_per_class, 5);
        assert_eq!(c.cohort_spec().seed, 11);
        assert_eq!(c.patch_size, 512);
    }
}
