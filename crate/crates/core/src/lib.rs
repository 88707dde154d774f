//! Finite abstractions of sampled control systems on uniform hyper-interval
//! grids, prediction of their transition counts, and selection of the grid
//! aspect ratio at fixed cell volume.
//!
//! The modules build on each other bottom-up:
//!
//! - [`numat`]: dense matrix helpers (exponential, irreducibility, augmented
//!   matrices, block-triangular structure).
//! - [`growth`]: affine growth bounds and the predictor data `(A, p)`.
//! - [`predictor`]: the transition-count predictor and the expected lattice
//!   point count with a Monte Carlo check.
//! - [`optimizer`]: minimization of the predicted transition count over grid
//!   parameters of fixed volume, uniqueness certificates and a brute-force
//!   reference solver.
//! - [`abstraction`]: grids, successor boxes and the abstraction build.
//! - [`models`]: built-in plants.

pub mod abstraction;
pub mod growth;
pub mod models;
pub mod numat;
pub mod optimizer;
pub mod predictor;

pub use growth::{GrowthBound, PredictorTerm};
pub use numat::Matrix;
pub use predictor::GridParameter;
