//! Transition-count prediction.
//!
//! For a predictor term `(A, p)` and grid parameter `η` the expected number
//! of successor cells of one `(cell, input)` pair is
//!
//! ```text
//! E(η) = ∏ᵢ (pᵢ + Σⱼ A_ij ηⱼ) / ηᵢ
//! ```
//!
//! under the assumption that the image of the cell center is uniformly
//! distributed relative to the grid. A family of growth bounds sums the
//! per-term predictions. Abstractions whose flow maps cell centers onto the
//! lattice (the zero vector field being the extreme case) are adversarial
//! for the prediction: closed boundary contacts add cells the expectation
//! does not see.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::growth::PredictorTerm;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictorError {
    #[error("grid parameter component {index} = {value} must be positive and finite")]
    NonPositiveEta { index: usize, value: f64 },
    #[error("grid parameter must have at least one component")]
    EmptyEta,
    #[error("radius component {index} = {value} must be positive and finite")]
    NonPositiveRadius { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("predictor family must contain at least one term")]
    EmptyFamily,
    #[error("number of cells must be positive")]
    NoCells,
}

/// Cell edge lengths `η`, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GridParameter(Vec<f64>);

impl GridParameter {
    pub fn new(eta: Vec<f64>) -> Result<Self, PredictorError> {
        if eta.is_empty() {
            return Err(PredictorError::EmptyEta);
        }
        if let Some(index) = eta.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(PredictorError::NonPositiveEta {
                index,
                value: eta[index],
            });
        }
        Ok(Self(eta))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Product of the edge lengths.
    pub fn volume(&self) -> f64 {
        self.0.iter().product()
    }
}

impl std::ops::Deref for GridParameter {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(expected: usize, found: usize) -> Result<(), PredictorError> {
    if expected != found {
        return Err(PredictorError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `E_{A,p}(η)`.
pub fn predict_single(term: &PredictorTerm, eta: &GridParameter) -> Result<f64, PredictorError> {
    let n = term.dim();
    check_dim(n, eta.dim())?;
    let a = term.a();
    let p = term.p();
    Ok((0..n)
        .map(|i| {
            let row: f64 = (0..n).map(|j| a[(i, j)] * eta[j]).sum();
            (p[i] + row) / eta[i]
        })
        .product())
}

/// `Ẽ(η) = Σ_terms E_{A,p}(η)`.
pub fn predict_family(terms: &[PredictorTerm], eta: &GridParameter) -> Result<f64, PredictorError> {
    if terms.is_empty() {
        return Err(PredictorError::EmptyFamily);
    }
    terms.iter().map(|t| predict_single(t, eta)).sum()
}

/// Predicted total number of transitions of an abstraction with
/// `num_cells` cells.
pub fn predict_abstraction_total(
    terms: &[PredictorTerm],
    eta: &GridParameter,
    num_cells: u64,
) -> Result<f64, PredictorError> {
    if num_cells == 0 {
        return Err(PredictorError::NoCells);
    }
    Ok(num_cells as f64 * predict_family(terms, eta)?)
}

fn check_radius(r: &[f64], n: usize) -> Result<(), PredictorError> {
    check_dim(n, r.len())?;
    if let Some(index) = r.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(PredictorError::NonPositiveRadius {
            index,
            value: r[index],
        });
    }
    Ok(())
}

/// Expected number of lattice points of `ηℤⁿ` in `c + [-r, r]` for a center
/// uniformly distributed modulo the lattice: `∏ 2rᵢ/ηᵢ`.
pub fn exact_expected_cells(eta: &GridParameter, r: &[f64]) -> Result<f64, PredictorError> {
    check_radius(r, eta.dim())?;
    Ok(eta.iter().zip(r).map(|(e, r)| 2.0 * r / e).product())
}

/// Number of points of `ηℤ` in the closed interval `[c - r, c + r]`.
fn lattice_points_1d(c: f64, r: f64, eta: f64) -> u64 {
    let hi = ((c + r) / eta).floor();
    let lo = ((c - r) / eta).ceil();
    if hi < lo {
        0
    } else {
        (hi - lo) as u64 + 1
    }
}

const MC_SHARDS: u64 = 64;

/// Monte Carlo estimate of [`exact_expected_cells`].
///
/// Samples are split over a fixed number of shards; shard `k` draws from
/// ChaCha8 seeded with `seed` on stream `k`, and shard counts are summed in
/// shard order. The result is bit-reproducible regardless of thread count.
pub fn mc_expected_cells(
    eta: &GridParameter,
    r: &[f64],
    samples: u64,
    seed: u64,
) -> Result<f64, PredictorError> {
    check_dim(eta.dim(), r.len())?;
    if samples == 0 {
        return Ok(0.0);
    }
    let per_shard = samples / MC_SHARDS;
    let extra = samples % MC_SHARDS;
    let counts: Vec<u64> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let draws = per_shard + u64::from(shard < extra);
            let mut total = 0u64;
            for _ in 0..draws {
                total += eta
                    .iter()
                    .zip(r)
                    .map(|(&e, &ri)| lattice_points_1d(rng.random_range(0.0..e), ri, e))
                    .product::<u64>();
            }
            total
        })
        .collect();
    let total: u64 = counts.iter().sum();
    Ok(total as f64 / samples as f64)
}
