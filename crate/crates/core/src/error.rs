use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("stain vectors are linearly dependent (|det| = {0:e})")]
    SingularStainMatrix(f64),

    #[error("invalid stain matrix: {0}")]
    InvalidStainMatrix(String),

    #[error("invalid tile: {0}")]
    InvalidTile(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("annotation parse error: {0}")]
    Parse(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("solver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("region of {width}x{height} px is smaller than one {patch} px patch")]
    RoiTooSmall { width: usize, height: usize, patch: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("no tumor cells to fit a density")]
    NoTumorCells,

    #[error("patch is not eligible for a descriptor")]
    IneligiblePatch,

    #[error("subject has no eligible patches")]
    NoEligiblePatches,

    #[error("placed {placed} of {requested} requested cells")]
    PlacementOverflow { placed: usize, requested: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
