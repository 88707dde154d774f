//! Affine growth bounds `β(r, u) = e^{L(u) τ} r + v(u)` and their reduction
//! to the data `(A, p)` of the transition-count predictor.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numat::{self, Matrix, NumatError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrowthError {
    #[error(transparent)]
    Numat(#[from] NumatError),
    #[error("sampling time must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("{what} has length {found}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what}[{index}] = {value} must be nonnegative and finite")]
    Negative {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("predictor matrix entry ({row}, {col}) = {value} violates A >= 0 with positive diagonal")]
    InvalidPredictorMatrix { row: usize, col: usize, value: f64 },
}

pub(crate) fn check_nonnegative(
    what: &'static str,
    x: &[f64],
    expected: usize,
) -> Result<(), GrowthError> {
    if x.len() != expected {
        return Err(GrowthError::Length {
            what,
            expected,
            found: x.len(),
        });
    }
    match x.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(index) => Err(GrowthError::Negative {
            what,
            index,
            value: x[index],
        }),
        None => Ok(()),
    }
}

/// Growth bound of the affine form for one input symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthBound {
    l: Matrix,
    v: Vec<f64>,
    tau: f64,
    /// `e^{L τ}`, cached at construction.
    flow: Matrix,
}

impl GrowthBound {
    pub fn new(l: Matrix, v: Vec<f64>, tau: f64) -> Result<Self, GrowthError> {
        let n = numat::check_square(&l)?;
        if !numat::is_essentially_nonnegative(&l)? {
            let (row, col) = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .find(|&(i, j)| i != j && l[(i, j)] < 0.0)
                .expect("negative off-diagonal entry");
            return Err(NumatError::NotEssentiallyNonnegative { row, col }.into());
        }
        check_nonnegative("v", &v, n)?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(GrowthError::InvalidTau(tau));
        }
        let flow = numat::expm(&l, tau)?;
        Ok(Self { l, v, tau, flow })
    }

    /// Builds the bound with `v = ∫₀^τ e^{Ls} ds · w` from a disturbance
    /// bound `w`.
    pub fn from_disturbance(l: Matrix, w: &[f64], tau: f64) -> Result<Self, GrowthError> {
        let v = disturbance_offset(&l, w, tau)?;
        Self::new(l, v, tau)
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `e^{L τ}`.
    pub fn flow_matrix(&self) -> &Matrix {
        &self.flow
    }

    /// `β(r) = e^{Lτ} r + v`.
    pub fn eval(&self, r: &[f64]) -> Result<Vec<f64>, GrowthError> {
        check_nonnegative("r", r, self.dim())?;
        let er = &self.flow * DVector::from_column_slice(r);
        Ok(er.iter().zip(&self.v).map(|(a, b)| a + b).collect())
    }

    /// `A = I + e^{Lτ}`, `p = 2(Az + v)`.
    pub fn to_predictor_term(&self, z: &[f64]) -> Result<PredictorTerm, GrowthError> {
        let n = self.dim();
        check_nonnegative("z", z, n)?;
        let a = Matrix::identity(n, n) + &self.flow;
        let az = &a * DVector::from_column_slice(z);
        let p = az
            .iter()
            .zip(&self.v)
            .map(|(x, v)| 2.0 * (x + v))
            .collect();
        PredictorTerm::new(a, p)
    }
}

/// Free-function form of [`GrowthBound::eval`].
pub fn eval_growth(gb: &GrowthBound, r: &[f64]) -> Result<Vec<f64>, GrowthError> {
    gb.eval(r)
}

/// Free-function form of [`GrowthBound::to_predictor_term`].
pub fn to_predictor_term(gb: &GrowthBound, z: &[f64]) -> Result<PredictorTerm, GrowthError> {
    gb.to_predictor_term(z)
}

/// `v = ∫₀^τ e^{Ls} ds · w`, the offset induced by a disturbance bounded
/// componentwise by `w`.
pub fn disturbance_offset(l: &Matrix, w: &[f64], tau: f64) -> Result<Vec<f64>, GrowthError> {
    let n = numat::check_square(l)?;
    check_nonnegative("w", w, n)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(GrowthError::InvalidTau(tau));
    }
    let integral = numat::integral_expm(l, tau)?;
    let v = integral * DVector::from_column_slice(w);
    // Clamp roundoff below zero; the exact value is nonnegative.
    Ok(v.iter().map(|x| x.max(0.0)).collect())
}

/// The pair `(A, p)` of the predictor `E_{A,p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTerm {
    a: Matrix,
    p: Vec<f64>,
}

impl PredictorTerm {
    /// Requires `A >= 0` with strictly positive diagonal and `p >= 0`.
    pub fn new(a: Matrix, p: Vec<f64>) -> Result<Self, GrowthError> {
        let n = numat::check_square(&a)?;
        for i in 0..n {
            for j in 0..n {
                let value = a[(i, j)];
                let ok = value.is_finite() && if i == j { value > 0.0 } else { value >= 0.0 };
                if !ok {
                    return Err(GrowthError::InvalidPredictorMatrix { row: i, col: j, value });
                }
            }
        }
        check_nonnegative("p", &p, n)?;
        Ok(Self { a, p })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }
}

/// Samples pairs `r >= r' >= 0` and checks `map(r) >= map(r')`
/// componentwise. The unit vectors against zero are always probed first, so
/// a negative linear coefficient is caught deterministically.
pub fn check_monotone_map<F>(dim: usize, map: F, trials: usize, seed: u64) -> bool
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let dominates = |hi: &[f64], lo: &[f64]| {
        let (fh, fl) = (map(hi), map(lo));
        fh.iter().zip(&fl).all(|(a, b)| *a >= *b - 1e-12 * b.abs().max(a.abs()))
    };
    let zero = vec![0.0; dim];
    for j in 0..dim {
        let mut e = zero.clone();
        e[j] = 1.0;
        if !dominates(&e, &zero) {
            return false;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let lo: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..10.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|x| x + rng.random_range(0.0..10.0)).collect();
        if !dominates(&hi, &lo) {
            return false;
        }
    }
    true
}

/// Monotonicity self-check of a growth bound; exercises the nonnegativity of
/// the computed `e^{Lτ}`.
pub fn check_growth_monotone(gb: &GrowthBound, trials: usize, seed: u64) -> bool {
    check_monotone_map(
        gb.dim(),
        |r| gb.eval(r).expect("sampled radii are valid"),
        trials,
        seed,
    )
}
