//! Choice of the grid aspect ratio at fixed cell volume.
//!
//! The predicted transition count `Ẽ(ξ)` is minimized over `ξ > 0` with
//! `∏ ξᵢ = e^γ`. In log coordinates `x = ln ξ` the problem becomes
//!
//! ```text
//! minimize g(x) = Σ_terms e^{-γ} ∏ᵢ Rᵢ(x),   Rᵢ(x) = pᵢ + Σⱼ A_ij e^{xⱼ}
//! subject to x ∈ V_γ = { x : Σ xᵢ = γ },  lower <= x <= upper
//! ```
//!
//! which is convex. [`minimize`] solves it with a projected Newton method,
//! [`brute_force_minimize`] is an independent lattice search used as a
//! reference, and [`certificate`] decides whether the minimizer is unique.

mod brute;
pub mod certificate;
mod newton;
mod projection;

pub use brute::{brute_force_minimize, BruteForceSolution};
pub use certificate::{
    certify_growth_family, certify_objective, uniqueness_certificate, Certificate,
    CertificateReport,
};
pub use newton::{minimize, MinimizeOptions};
pub use projection::project_hyperplane_box;

use thiserror::Error;

use crate::growth::{GrowthBound, GrowthError, PredictorTerm};
use crate::numat::Matrix;
use crate::predictor::GridParameter;

/// Largest exponent whose `exp` is finite.
const LN_MAX: f64 = 709.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("objective must contain at least one term")]
    EmptyObjective,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite argument")]
    NonFinite,
    #[error("objective overflow: log-value {log_value} exceeds the representable range")]
    Overflow { log_value: f64 },
    #[error("box bound {index}: lower {lower} must be below upper {upper}")]
    InvalidBox { index: usize, lower: f64, upper: f64 },
    #[error("volume constraint sum(x) = {gamma} does not meet the box (sum lower = {sum_lower}, sum upper = {sum_upper})")]
    Infeasible {
        gamma: f64,
        sum_lower: f64,
        sum_upper: f64,
    },
    #[error("no convergence after {iterations} iterations (projected gradient norm {kkt_residual:e})")]
    NotConverged {
        iterations: usize,
        kkt_residual: f64,
        x: Vec<f64>,
    },
    #[error(
        "iterates diverged (|x|_inf = {norm_inf:.3e}, value {value:e}); certificate {certificate}, \
         lower bound at last iterate {lower_bound:e}"
    )]
    Diverged {
        norm_inf: f64,
        value: f64,
        certificate: Certificate,
        lower_bound: f64,
    },
    #[error("every entry of every A and p is zero; the coercivity bound is degenerate")]
    DegenerateLowerBound,
    #[error("lower bound requires a single-term objective with n >= 2")]
    LowerBoundUnsupported,
    #[error("lattice of {points:.3e} rows is too large for brute force")]
    LatticeTooLarge { points: f64 },
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

/// Sum of predictor terms sharing a dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    terms: Vec<PredictorTerm>,
    n: usize,
}

impl Objective {
    pub fn new(terms: Vec<PredictorTerm>) -> Result<Self, OptimizeError> {
        let n = terms.first().ok_or(OptimizeError::EmptyObjective)?.dim();
        if let Some(t) = terms.iter().find(|t| t.dim() != n) {
            return Err(OptimizeError::DimensionMismatch {
                expected: n,
                found: t.dim(),
            });
        }
        Ok(Self { terms, n })
    }

    pub fn single(term: PredictorTerm) -> Self {
        let n = term.dim();
        Self {
            terms: vec![term],
            n,
        }
    }

    /// Terms `A = I + e^{Lτ}`, `p = 2(Az + v)` of a growth-bound family.
    pub fn from_growth(bounds: &[GrowthBound], z: &[f64]) -> Result<Self, OptimizeError> {
        let terms = bounds
            .iter()
            .map(|gb| gb.to_predictor_term(z))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(terms)
    }

    pub fn terms(&self) -> &[PredictorTerm] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest nonzero entry over all `A` and `p`.
    pub fn smallest_nonzero_entry(&self) -> Option<f64> {
        self.terms
            .iter()
            .flat_map(|t| t.a().iter().chain(t.p().iter()).copied())
            .filter(|&x| x > 0.0)
            .reduce(f64::min)
    }

    fn check_point(&self, x: &[f64]) -> Result<(), OptimizeError> {
        if x.len() != self.n {
            return Err(OptimizeError::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OptimizeError::NonFinite);
        }
        Ok(())
    }

    /// `ln` of one term's value, together with the row sums `Rᵢ(x)`.
    fn term_log_value(term: &PredictorTerm, gamma: f64, ex: &[f64], rows: &mut [f64]) -> f64 {
        let a = term.a();
        let p = term.p();
        let n = ex.len();
        let mut log = -gamma;
        for i in 0..n {
            let r = p[i] + (0..n).map(|j| a[(i, j)] * ex[j]).sum::<f64>();
            rows[i] = r;
            log += r.ln();
        }
        log
    }
}

/// Per-coordinate bounds in log coordinates; infinite values mean no bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimizeError> {
        if lower.len() != upper.len() {
            return Err(OptimizeError::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (index, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l >= u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(OptimizeError::InvalidBox {
                    index,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Bounds on the grid parameter `η` itself, converted to logs.
    pub fn from_eta_bounds(
        lower: Option<&[f64]>,
        upper: Option<&[f64]>,
        n: usize,
    ) -> Result<Self, OptimizeError> {
        let conv = |b: Option<&[f64]>, default: f64| -> Result<Vec<f64>, OptimizeError> {
            match b {
                None => Ok(vec![default; n]),
                Some(v) if v.len() != n => Err(OptimizeError::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                }),
                Some(v) => Ok(v
                    .iter()
                    .map(|&e| {
                        if e.is_infinite() && e > 0.0 {
                            f64::INFINITY
                        } else if e <= 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            e.ln()
                        }
                    })
                    .collect()),
            }
        };
        Self::new(
            conv(lower, f64::NEG_INFINITY)?,
            conv(upper, f64::INFINITY)?,
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Nonemptiness of `V_γ ∩ box`.
    pub fn check_feasible(&self, gamma: f64) -> Result<(), OptimizeError> {
        let sum_lower: f64 = self.lower.iter().sum();
        let sum_upper: f64 = self.upper.iter().sum();
        if !gamma.is_finite() || sum_lower > gamma || sum_upper < gamma {
            return Err(OptimizeError::Infeasible {
                gamma,
                sum_lower,
                sum_upper,
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| l <= v && v <= u)
    }
}

/// Minimizer of the log-transformed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x_star: Vec<f64>,
    pub eta_star: GridParameter,
    pub value: f64,
    pub iterations: usize,
    pub certificate: Certificate,
    /// Norm of `x - P(x - ∇g(x))` at `x_star`.
    pub kkt_residual: f64,
}

/// `g(x) = Σ_terms e^{-γ} ∏ᵢ Rᵢ(x)`, evaluated through logarithms.
pub fn g_value(obj: &Objective, gamma: f64, x: &[f64]) -> Result<f64, OptimizeError> {
    obj.check_point(x)?;
    let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let mut rows = vec![0.0; obj.n];
    let mut total = 0.0;
    for term in &obj.terms {
        let log_value = Objective::term_log_value(term, gamma, &ex, &mut rows);
        if log_value.is_nan() || log_value > LN_MAX {
            return Err(OptimizeError::Overflow { log_value });
        }
        total += log_value.exp();
    }
    if !total.is_finite() {
        return Err(OptimizeError::Overflow {
            log_value: f64::INFINITY,
        });
    }
    Ok(total)
}

/// Value, gradient and (optionally) Hessian in one pass.
fn derivatives(
    obj: &Objective,
    gamma: f64,
    x: &[f64],
    with_hessian: bool,
) -> Result<(f64, Vec<f64>, Option<Matrix>), OptimizeError> {
    obj.check_point(x)?;
    let n = obj.n;
    let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let mut rows = vec![0.0; n];
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    let mut hess = with_hessian.then(|| Matrix::zeros(n, n));
    // weights[i][k] = A_ik e^{x_k} / R_i
    let mut weights = Matrix::zeros(n, n);
    let mut grad_log = vec![0.0; n];
    for term in &obj.terms {
        let log_value = Objective::term_log_value(term, gamma, &ex, &mut rows);
        if log_value.is_nan() || log_value > LN_MAX {
            return Err(OptimizeError::Overflow { log_value });
        }
        let gt = log_value.exp();
        value += gt;
        let a = term.a();
        for i in 0..n {
            for k in 0..n {
                weights[(i, k)] = a[(i, k)] * ex[k] / rows[i];
            }
        }
        for k in 0..n {
            grad_log[k] = (0..n).map(|i| weights[(i, k)]).sum();
            grad[k] += gt * grad_log[k];
        }
        if let Some(h) = hess.as_mut() {
            for k in 0..n {
                for l in 0..n {
                    let cross: f64 = (0..n).map(|i| weights[(i, k)] * weights[(i, l)]).sum();
                    let diag = if k == l { grad_log[k] } else { 0.0 };
                    h[(k, l)] += gt * (grad_log[k] * grad_log[l] + diag - cross);
                }
            }
        }
    }
    if !value.is_finite() {
        return Err(OptimizeError::Overflow {
            log_value: f64::INFINITY,
        });
    }
    Ok((value, grad, hess))
}

/// Analytic gradient of `g`.
pub fn g_gradient(obj: &Objective, gamma: f64, x: &[f64]) -> Result<Vec<f64>, OptimizeError> {
    derivatives(obj, gamma, x, false).map(|(_, g, _)| g)
}

/// Analytic Hessian of `g`; per term `g_t (∇G ∇Gᵀ + ∇²G)` with
/// `G = Σ ln Rᵢ`.
pub fn g_hessian(obj: &Objective, gamma: f64, x: &[f64]) -> Result<Matrix, OptimizeError> {
    derivatives(obj, gamma, x, true).map(|(_, _, h)| h.expect("hessian requested"))
}

/// Orthonormal basis of `V_0 = { h : Σ hᵢ = 0 }` in `ℝ^m`, as the columns
/// `2..m` of the Householder reflector mapping `e₁` to `1/√m`.
pub fn hyperplane_basis(m: usize) -> Matrix {
    if m < 2 {
        return Matrix::zeros(m, 0);
    }
    let u = 1.0 / (m as f64).sqrt();
    let mut v = nalgebra::DVector::from_element(m, -u);
    v[0] += 1.0;
    let vv = v.dot(&v);
    let reflector = Matrix::identity(m, m) - (&v * v.transpose()) * (2.0 / vv);
    reflector.columns(1, m - 1).into_owned()
}

/// Right-hand side of the coercivity bound,
/// `μⁿ e^{-|γ|c} e^{c‖x‖∞}` with `c = 1/(n-1)` and `μ` the smallest nonzero
/// entry of `A` and `p`.
pub fn lower_bound(obj: &Objective, gamma: f64, x: &[f64]) -> Result<f64, OptimizeError> {
    let n = obj.n;
    if n < 2 {
        return Err(OptimizeError::LowerBoundUnsupported);
    }
    obj.check_point(x)?;
    let mu = obj
        .smallest_nonzero_entry()
        .ok_or(OptimizeError::DegenerateLowerBound)?;
    let c = 1.0 / (n as f64 - 1.0);
    let norm_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(mu.powi(n as i32) * (-gamma.abs() * c).exp() * (c * norm_inf).exp())
}

/// One-sided check `g(x) >= lower_bound(x) - 1e-12`.
pub fn lower_bound_check(obj: &Objective, gamma: f64, x: &[f64]) -> Result<bool, OptimizeError> {
    if obj.terms.len() != 1 {
        return Err(OptimizeError::LowerBoundUnsupported);
    }
    let bound = lower_bound(obj, gamma, x)?;
    let value = g_value(obj, gamma, x)?;
    Ok(value >= bound - 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn term(rows: &[f64], p: &[f64]) -> PredictorTerm {
        let n = p.len();
        PredictorTerm::new(Matrix::from_row_slice(n, n, rows), p.to_vec()).unwrap()
    }

    #[test]
    fn g_value_examples() {
        let diag2 = Objective::single(term(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0]));
        assert_eq!(g_value(&diag2, 0.0, &[0.0, 0.0]).unwrap(), 4.0);
        let obj = Objective::single(term(&[1.0, 2.0, 3.0, 1.0], &[0.0, 0.0]));
        assert_eq!(g_value(&obj, 0.0, &[0.0, 0.0]).unwrap(), 12.0);
        // Hand expansion along x = (t, -t).
        let t: f64 = 0.2;
        let expected = 7.0 + 3.0 * (2.0 * t).exp() + 2.0 * (-2.0 * t).exp();
        assert_relative_eq!(g_value(&obj, 0.0, &[t, -t]).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(expected, 12.816, epsilon = 1e-3);
    }

    #[test]
    fn g_value_overflow_reported() {
        let obj = Objective::single(term(&[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0]));
        assert!(matches!(
            g_value(&obj, 0.0, &[400.0, 400.0]),
            Err(OptimizeError::Overflow { .. })
        ));
        assert!(matches!(
            g_value(&obj, 0.0, &[f64::NAN, 0.0]),
            Err(OptimizeError::NonFinite)
        ));
    }

    #[test]
    fn gradient_symmetry() {
        let obj = Objective::single(term(&[2.0, 1.0, 1.0, 2.0], &[0.5, 0.5]));
        let g = g_gradient(&obj, 0.3, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(g[0], g[1], max_relative = 1e-15);
        // g = 4 e^{x1 + x2 - γ}: every partial equals g.
        let diag2 = Objective::single(term(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0]));
        let x = [0.4, -0.4];
        let g = g_gradient(&diag2, 0.0, &x).unwrap();
        assert_relative_eq!(g[0], 4.0, max_relative = 1e-14);
        assert_relative_eq!(g[1], 4.0, max_relative = 1e-14);
    }

    #[test]
    fn negative_control_hessian_flat_along_hyperplane() {
        let diag2 = Objective::single(term(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0]));
        let h = g_hessian(&diag2, 0.0, &[0.0, 0.0]).unwrap();
        let b = hyperplane_basis(2);
        let reduced = b.transpose() * h * &b;
        assert!(reduced[(0, 0)].abs() <= 1e-12);
    }

    #[test]
    fn basis_is_orthonormal_and_in_hyperplane() {
        for m in 2..7 {
            let b = hyperplane_basis(m);
            let gram = b.transpose() * &b;
            assert_relative_eq!(gram, Matrix::identity(m - 1, m - 1), epsilon = 1e-14);
            for col in b.column_iter() {
                assert!(col.sum().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lower_bound_at_origin() {
        let obj = Objective::single(term(&[1.0, 0.5, 0.25, 1.0], &[0.0, 0.0]));
        let lb = lower_bound(&obj, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(lb, 0.25f64.powi(2));
        assert!(lower_bound_check(&obj, 0.0, &[0.0, 0.0]).unwrap());
        let one_d = Objective::single(term(&[1.0], &[0.0]));
        assert!(lower_bound(&one_d, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn box_validation() {
        assert!(BoxBounds::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoxBounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let b = BoxBounds::new(vec![0.0, -1.0], vec![1.0, f64::INFINITY]).unwrap();
        assert!(b.check_feasible(-1.0).is_ok());
        assert!(b.check_feasible(-1.5).is_err());
        assert!(b.check_feasible(1e9).is_ok());
        let b = BoxBounds::from_eta_bounds(None, Some(&[0.17, 0.17]), 2).unwrap();
        assert_relative_eq!(b.upper()[0], 0.17f64.ln());
        assert_eq!(b.lower()[1], f64::NEG_INFINITY);
    }
}
