use nalgebra::{DVector, SymmetricEigen};

use super::{
    certificate::uniqueness_certificate, derivatives, g_value, hyperplane_basis, lower_bound,
    project_hyperplane_box, BoxBounds, Objective, OptimizeError, Solution,
};
use crate::numat::Matrix;
use crate::predictor::GridParameter;

const ARMIJO: f64 = 1e-4;
/// Predicted decrease below this many ulps of `|g|` is accepted unchecked.
const ROUNDOFF_ULPS: f64 = 8.0;
const MAX_HALVINGS: usize = 60;
/// Upper limit on the distance at which a bound counts as active.
const ACTIVE_EPS: f64 = 1e-3;
/// Reduced Hessians with `λ_min <= SINGULAR_RATIO · λ_max` are treated as
/// singular and the step falls back to projected gradient.
const SINGULAR_RATIO: f64 = 1e-12;
/// `‖x‖∞` beyond which `e^x` is close to overflow.
const DIVERGENCE_NORM: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Stop when `‖x - P(x - ∇g)‖ <= tol · max(1, |g|)`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 500,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `∇g · moved` for a step that stays in the plane. The gradient is centered
/// on the coordinates that moved, so its common part cancels exactly.
fn in_plane_slope(grad: &[f64], moved: &[f64]) -> f64 {
    let (sum, count) = grad
        .iter()
        .zip(moved)
        .filter(|(_, m)| **m != 0.0)
        .fold((0.0, 0usize), |(s, c), (g, _)| (s + g, c + 1));
    if count == 0 {
        return 0.0;
    }
    let mean = sum / count as f64;
    grad.iter().zip(moved).map(|(g, m)| (g - mean) * m).sum()
}

/// Armijo backtracking along the projection arc `α ↦ P(x + α d)`.
#[allow(clippy::too_many_arguments)]
fn arc_search(
    obj: &Objective,
    gamma: f64,
    bounds: &BoxBounds,
    x: &[f64],
    value: f64,
    grad: &[f64],
    direction: &[f64],
    initial_step: f64,
) -> Result<Option<(Vec<f64>, f64)>, OptimizeError> {
    let slack = ROUNDOFF_ULPS * f64::EPSILON * value.abs();
    let mut alpha = initial_step;
    for _ in 0..=MAX_HALVINGS {
        let trial: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + alpha * d).collect();
        let candidate = project_hyperplane_box(&trial, gamma, bounds)?;
        let moved: Vec<f64> = candidate.iter().zip(x).map(|(c, a)| c - a).collect();
        let predicted = in_plane_slope(grad, &moved);
        if predicted < 0.0 {
            match g_value(obj, gamma, &candidate) {
                Ok(v) if v <= value + ARMIJO * predicted || -predicted <= slack => return Ok(Some((candidate, v))),
                Ok(_) | Err(OptimizeError::Overflow { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Minimizes `g` over `V_γ ∩ box` by projected Newton.
///
/// Each iteration holds the coordinates that lie within `min(residual, 1e-3)`
/// of a bound the gradient pushes them onto, takes a Newton step on the
/// remaining coordinates within the hyperplane and a scaled gradient step on
/// the held ones, and backtracks along the projection arc. Steps whose
/// predicted decrease is below roundoff in `g` are accepted as they are. If the reduced Hessian is numerically singular, or the Newton step
/// fails the sufficient-decrease test, a projected gradient step is taken
/// instead.
pub fn minimize(
    obj: &Objective,
    gamma: f64,
    bounds: &BoxBounds,
    options: &MinimizeOptions,
) -> Result<Solution, OptimizeError> {
    let n = obj.dim();
    if bounds.dim() != n {
        return Err(OptimizeError::DimensionMismatch {
            expected: n,
            found: bounds.dim(),
        });
    }
    if !gamma.is_finite() {
        return Err(OptimizeError::NonFinite);
    }
    bounds.check_feasible(gamma)?;
    let certificate = uniqueness_certificate(obj);

    let finish = |x: Vec<f64>, value: f64, iterations: usize, kkt_residual: f64| {
        let eta = GridParameter::new(x.iter().map(|v| v.exp()).collect())
            .map_err(|_| OptimizeError::NonFinite)?;
        Ok(Solution {
            x_star: x,
            eta_star: eta,
            value,
            iterations,
            certificate,
            kkt_residual,
        })
    };

    if n == 1 {
        // The volume constraint alone determines the point.
        let x = vec![gamma];
        let value = g_value(obj, gamma, &x)?;
        return finish(x, value, 0, 0.0);
    }

    let diverged = |x: &[f64], value: f64| OptimizeError::Diverged {
        norm_inf: x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        value,
        certificate,
        lower_bound: lower_bound(obj, gamma, x).unwrap_or(f64::NAN),
    };

    let mut x = project_hyperplane_box(&vec![gamma / n as f64; n], gamma, bounds)?;
    let mut residual = f64::INFINITY;
    for iteration in 0..options.max_iterations {
        let (value, grad, hess) = match derivatives(obj, gamma, &x, true) {
            Ok(d) => d,
            Err(OptimizeError::Overflow { .. }) => return Err(diverged(&x, f64::INFINITY)),
            Err(e) => return Err(e),
        };
        let hess = hess.expect("hessian requested");
        let stepped: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - g).collect();
        let projected = project_hyperplane_box(&stepped, gamma, bounds)?;
        let pg: Vec<f64> = x.iter().zip(&projected).map(|(a, b)| a - b).collect();
        residual = norm(&pg);
        if residual <= options.tol * value.abs().max(1.0) {
            return finish(x, value, iteration, residual);
        }
        if x.iter().any(|v| v.abs() > DIVERGENCE_NORM) {
            return Err(diverged(&x, value));
        }

        // A coordinate is held when it is within `eps` of a bound and the
        // gradient step lands on that bound.
        let eps = residual.min(ACTIVE_EPS);
        let held = |i: usize| {
            let (l, u) = (bounds.lower()[i], bounds.upper()[i]);
            (x[i] - l <= eps && projected[i] == l) || (u - x[i] <= eps && projected[i] == u)
        };
        let free: Vec<usize> = (0..n).filter(|&i| !held(i)).collect();

        let mut next = None;
        if free.len() >= 2 {
            let m = free.len();
            let basis = hyperplane_basis(m);
            let h_free = Matrix::from_fn(m, m, |a, b| hess[(free[a], free[b])]);
            let g_free = DVector::from_iterator(m, free.iter().map(|&i| grad[i]));
            let reduced = basis.transpose() * &h_free * &basis;
            let rhs = basis.transpose() * &g_free;
            let eig = SymmetricEigen::new(reduced);
            let max_eig = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
            let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if max_eig > 0.0 && min_eig > SINGULAR_RATIO * max_eig {
                let coeffs = eig.eigenvectors.transpose() * &rhs;
                let scaled = DVector::from_iterator(
                    m - 1,
                    coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| -c / l),
                );
                let d_free = &basis * (&eig.eigenvectors * scaled);
                // Held coordinates take a diagonally scaled gradient step so
                // the projection can settle them on their bound.
                let multiplier = g_free.mean();
                let mut direction: Vec<f64> = (0..n)
                    .map(|i| -(grad[i] - multiplier) / hess[(i, i)].max(f64::MIN_POSITIVE))
                    .collect();
                for (k, &i) in free.iter().enumerate() {
                    direction[i] = d_free[k];
                }
                next = arc_search(obj, gamma, bounds, &x, value, &grad, &direction, 1.0)?;
            }
        }
        if next.is_none() {
            let scale = hess.iter().map(|h| h * h).sum::<f64>().sqrt();
            let step = if scale > 0.0 { 1.0 / scale } else { 1.0 };
            let direction: Vec<f64> = grad.iter().map(|g| -g).collect();
            next = arc_search(obj, gamma, bounds, &x, value, &grad, &direction, step)?;
        }
        match next {
            Some((candidate, _)) if candidate != x => x = candidate,
            _ => {
                return Err(OptimizeError::NotConverged {
                    iterations: iteration + 1,
                    kkt_residual: residual,
                    x,
                })
            }
        }
    }
    Err(OptimizeError::NotConverged {
        iterations: options.max_iterations,
        kkt_residual: residual,
        x,
    })
}
