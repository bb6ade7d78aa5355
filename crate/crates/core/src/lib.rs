//! Eigenvector spatial filtering (ESF) with Moran's-I-tuned Lasso selection.
//!
//! The crate is organised bottom-up:
//!
//! * [`weights`] builds, validates, normalizes and decomposes spatial weights.
//! * [`moran`] computes Moran's I on regression residuals and its exact
//!   standardization.
//! * [`lasso`] solves the partially penalized Lasso by coordinate descent.
//! * [`estimators`] implements the eigenvector selection procedures.
//! * [`montecarlo`] generates spatial data and runs simulation grids,
//!   timing comparisons and the sparse-recovery study.
//! * [`io`] reads and writes the on-disk formats.

pub mod error;
pub mod estimators;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod montecarlo;
pub mod moran;
pub mod seed;
pub mod weights;

pub use error::{EsfError, Result};
pub use estimators::{Dataset, EstimationReport, Method};
pub use lasso::{LassoSolution, PartialLassoProblem, SolverOptions};
pub use moran::{MoranResult, ResidualMaker};
pub use weights::{EigenBasis, Normalization, SpatialWeights};

pub use nalgebra::{DMatrix, DVector};
