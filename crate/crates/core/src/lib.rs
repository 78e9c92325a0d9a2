//! Multiscale blob candidate generation for 3D volumes using the
//! scale-normalized Laplacian of Gaussian.

pub mod analytic;
pub mod detect;
pub mod error;
pub mod evaluate;
mod fft;
pub mod io;
pub mod logfilter;
pub mod phantom;
pub mod scaleplan;
pub mod volume;

pub use detect::{Candidate, DetectionConfig};
pub use error::{Error, Result};
pub use scaleplan::{ScaleEntry, ScalePlan};
pub use volume::{Grid, Mask3D, Units, Volume3D};
