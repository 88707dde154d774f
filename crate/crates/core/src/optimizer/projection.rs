use super::{BoxBounds, OptimizeError};

fn clamped_sum(y: &[f64], lambda: f64, bounds: &BoxBounds) -> f64 {
    y.iter()
        .zip(bounds.lower().iter().zip(bounds.upper()))
        .map(|(&v, (&l, &u))| (v - lambda).clamp(l, u))
        .sum()
}

/// Euclidean projection of `y` onto `V_γ ∩ box`.
///
/// The projection is `clamp(y - λ1, lower, upper)` for the hyperplane
/// multiplier `λ`, which is bracketed and bisected on the monotone map
/// `λ ↦ Σ clamp(yᵢ - λ)`, then solved exactly once the clamped set is known.
pub fn project_hyperplane_box(
    y: &[f64],
    gamma: f64,
    bounds: &BoxBounds,
) -> Result<Vec<f64>, OptimizeError> {
    let n = y.len();
    if bounds.dim() != n {
        return Err(OptimizeError::DimensionMismatch {
            expected: bounds.dim(),
            found: n,
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::NonFinite);
    }
    bounds.check_feasible(gamma)?;

    let center = (y.iter().sum::<f64>() - gamma) / n as f64;
    let mut step = center.abs().max(1.0);
    let mut lo = center - step;
    while clamped_sum(y, lo, bounds) < gamma {
        step *= 2.0;
        lo = center - step;
    }
    step = center.abs().max(1.0);
    let mut hi = center + step;
    while clamped_sum(y, hi, bounds) > gamma {
        step *= 2.0;
        hi = center + step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clamped_sum(y, mid, bounds) >= gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut lambda = 0.5 * (lo + hi);

    // Solve for λ exactly on the piece selected by bisection.
    let (lower, upper) = (bounds.lower(), bounds.upper());
    let mut fixed = 0.0;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for i in 0..n {
        let t = y[i] - lambda;
        if t <= lower[i] {
            fixed += lower[i];
        } else if t >= upper[i] {
            fixed += upper[i];
        } else {
            free_sum += y[i];
            free += 1;
        }
    }
    if free > 0 {
        let exact = (free_sum + fixed - gamma) / free as f64;
        if exact.is_finite() && exact >= lo - 1e-9 * (1.0 + lo.abs()) && exact <= hi + 1e-9 * (1.0 + hi.abs()) {
            lambda = exact;
        }
    }
    let mut x: Vec<f64> = (0..n)
        .map(|i| (y[i] - lambda).clamp(lower[i], upper[i]))
        .collect();

    // Spread the remaining roundoff over coordinates strictly inside the box.
    let inside: Vec<usize> = (0..n).filter(|&i| lower[i] < x[i] && x[i] < upper[i]).collect();
    if !inside.is_empty() {
        let residual = gamma - x.iter().sum::<f64>();
        let share = residual / inside.len() as f64;
        for &i in &inside {
            x[i] = (x[i] + share).clamp(lower[i], upper[i]);
        }
    }
    Ok(x)
}
