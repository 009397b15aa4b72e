pub mod curriculum;
pub mod domain;
pub mod error;
pub mod labeling;
mod linalg;
pub mod metrics;
pub mod mixview;
pub mod pixelmodel;
pub mod pnm;
pub mod scenegen;

pub use domain::{classes_present, one_hot, sample_ladder, ClassId, Image, LabelMap, Palette, Sample, ViewLadder};
pub use error::{Error, Result};
