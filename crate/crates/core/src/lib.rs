//! Cell and patch level analysis of H&E ovarian tumour tiles.

pub mod annotation;
pub mod classify;
pub mod contour;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod io;
pub mod lasso;
pub mod patch;
pub mod plane;
pub mod segment;
pub mod stain;
pub mod synth;

pub use error::{Error, Result};
