//! Iterative through-focus optical proximity correction.

mod controller;
mod flow;
mod segments;

pub use controller::*;
pub use flow::*;
pub use segments::*;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpcError {
    #[error("ring {0} is not Manhattan")]
    NonManhattan(usize),
    #[error("layer `{0}` not found")]
    MissingLayer(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("retargeting collapses features {0:?}")]
    Collapse(Vec<usize>),
    #[error("mask fails MRC after iteration {iteration} ({violations} violations)")]
    MrcDirty { iteration: usize, violations: usize },
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Contour(#[from] crate::contour::ContourError),
    #[error(transparent)]
    Mrc(#[from] crate::mrc::MrcError),
}
