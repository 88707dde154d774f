use rayon::prelude::*;

use super::{g_value, project_hyperplane_box, BoxBounds, Objective, OptimizeError};
use crate::predictor::GridParameter;

/// Best lattice point found by [`brute_force_minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceSolution {
    pub x_star: Vec<f64>,
    pub eta_star: GridParameter,
    pub value: f64,
    pub evaluations: u64,
    /// Half-width of the searched patch `‖x‖∞ <= radius`.
    pub patch_radius: f64,
    /// Smallest and largest objective value over all evaluated points.
    pub value_range: (f64, f64),
}

impl BruteForceSolution {
    /// Whether every evaluated value agrees with the minimum to `rel_tol`.
    pub fn is_flat(&self, rel_tol: f64) -> bool {
        let (lo, hi) = self.value_range;
        hi - lo <= rel_tol * lo.abs()
    }
}

const ROWS_PER_CHUNK: u64 = 256;
const MAX_ROWS: f64 = 5e8;

#[derive(Debug, Clone, Copy)]
struct ChunkBest {
    value: f64,
    row: u64,
    walk: i64,
    evaluations: u64,
    min: f64,
    max: f64,
}

/// Exhaustive search over the lattice `anchor + resolution·ℤ^{n-1}` in the
/// first `n - 1` coordinates, the last coordinate being fixed by the volume
/// constraint.
///
/// The patch is `{ x ∈ V_γ ∩ box : ‖x‖∞ <= R }`, where `R` comes from the
/// coercivity bound `g(x) >= μⁿ e^{-|γ|c} e^{c‖x‖∞}` applied at the level
/// `g(anchor)`, plus a unit margin. Every row of the lattice along
/// coordinate `n - 1` is scanned; because `g` is convex along lines, each
/// row is walked from a warm start until the value increases instead of
/// being evaluated in full. Ties go to the lexicographically smallest
/// lattice index.
pub fn brute_force_minimize(
    obj: &Objective,
    gamma: f64,
    bounds: &BoxBounds,
    resolution: f64,
) -> Result<BruteForceSolution, OptimizeError> {
    let n = obj.dim();
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(OptimizeError::InvalidResolution(resolution));
    }
    if bounds.dim() != n {
        return Err(OptimizeError::DimensionMismatch {
            expected: n,
            found: bounds.dim(),
        });
    }
    bounds.check_feasible(gamma)?;
    let finish = |x: Vec<f64>, value: f64, evaluations: u64, radius: f64, range: (f64, f64)| {
        let eta = GridParameter::new(x.iter().map(|v| v.exp()).collect())
            .map_err(|_| OptimizeError::NonFinite)?;
        Ok(BruteForceSolution {
            x_star: x,
            eta_star: eta,
            value,
            evaluations,
            patch_radius: radius,
            value_range: range,
        })
    };
    if n == 1 {
        let value = g_value(obj, gamma, &[gamma])?;
        return finish(vec![gamma], value, 1, gamma.abs(), (value, value));
    }

    let mu = obj
        .smallest_nonzero_entry()
        .ok_or(OptimizeError::DegenerateLowerBound)?;
    let anchor = project_hyperplane_box(&vec![gamma / n as f64; n], gamma, bounds)?;
    let level = g_value(obj, gamma, &anchor)?;
    let c = 1.0 / (n as f64 - 1.0);
    let anchor_norm = anchor.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let radius = (((level.ln() - n as f64 * mu.ln() + gamma.abs() * c) / c).max(0.0) + 1.0)
        .max(anchor_norm);

    let lo: Vec<f64> = bounds.lower().iter().map(|l| l.max(-radius)).collect();
    let hi: Vec<f64> = bounds.upper().iter().map(|u| u.min(radius)).collect();
    let index_range = |i: usize, lo_x: f64, hi_x: f64| -> (i64, i64) {
        (
            ((lo_x - anchor[i]) / resolution - 1e-9).ceil() as i64,
            ((hi_x - anchor[i]) / resolution + 1e-9).floor() as i64,
        )
    };

    let walk_dim = n - 2;
    let dep_dim = n - 1;
    let outer: Vec<(i64, i64)> = (0..walk_dim).map(|i| index_range(i, lo[i], hi[i])).collect();
    let rows_f: f64 = outer.iter().map(|(a, b)| (b - a + 1).max(0) as f64).product();
    if rows_f > MAX_ROWS {
        return Err(OptimizeError::LatticeTooLarge { points: rows_f });
    }
    let rows = rows_f as u64;
    if rows == 0 {
        return Err(OptimizeError::Infeasible {
            gamma,
            sum_lower: lo.iter().sum(),
            sum_upper: hi.iter().sum(),
        });
    }

    let point_for = |row: u64, walk: i64| -> Vec<f64> {
        let mut x = vec![0.0; n];
        let mut rest = row;
        for i in (0..walk_dim).rev() {
            let (a, b) = outer[i];
            let len = (b - a + 1) as u64;
            x[i] = anchor[i] + (a + (rest % len) as i64) as f64 * resolution;
            rest /= len;
        }
        x[walk_dim] = anchor[walk_dim] + walk as f64 * resolution;
        let s: f64 = x[..dep_dim].iter().sum();
        x[dep_dim] = gamma - s;
        x
    };
    let eval = |x: &[f64]| g_value(obj, gamma, x).unwrap_or(f64::INFINITY);

    let chunks = rows.div_ceil(ROWS_PER_CHUNK);
    let results: Vec<Option<ChunkBest>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut best: Option<ChunkBest> = None;
            let mut evaluations = 0u64;
            let mut vmin = f64::INFINITY;
            let mut vmax = f64::NEG_INFINITY;
            let mut warm = 0i64;
            let first = chunk * ROWS_PER_CHUNK;
            for row in first..(first + ROWS_PER_CHUNK).min(rows) {
                let base = point_for(row, 0);
                let s: f64 = base[..walk_dim].iter().sum();
                let w_lo = lo[walk_dim].max(gamma - s - hi[dep_dim]);
                let w_hi = hi[walk_dim].min(gamma - s - lo[dep_dim]);
                let (kmin, kmax) = index_range(walk_dim, w_lo, w_hi);
                if kmin > kmax {
                    continue;
                }
                let mut f = |k: i64| {
                    let v = eval(&point_for(row, k));
                    evaluations += 1;
                    if v.is_finite() {
                        vmin = vmin.min(v);
                        vmax = vmax.max(v);
                    }
                    v
                };
                let mut k = warm.clamp(kmin, kmax);
                let mut fk = f(k);
                if k > kmin && f(k - 1) <= fk {
                    loop {
                        k -= 1;
                        fk = f(k);
                        if k == kmin {
                            break;
                        }
                        let left = f(k - 1);
                        if left > fk {
                            break;
                        }
                    }
                } else {
                    while k < kmax {
                        let right = f(k + 1);
                        if right < fk {
                            k += 1;
                            fk = right;
                        } else {
                            break;
                        }
                    }
                }
                warm = k;
                if best.is_none_or(|b| fk < b.value) {
                    best = Some(ChunkBest {
                        value: fk,
                        row,
                        walk: k,
                        evaluations: 0,
                        min: 0.0,
                        max: 0.0,
                    });
                }
            }
            best.map(|b| ChunkBest {
                evaluations,
                min: vmin,
                max: vmax,
                ..b
            })
        })
        .collect();

    let mut best: Option<ChunkBest> = None;
    let mut evaluations = 0;
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for r in results.into_iter().flatten() {
        evaluations += r.evaluations;
        range = (range.0.min(r.min), range.1.max(r.max));
        if best.is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let best = best.ok_or(OptimizeError::Infeasible {
        gamma,
        sum_lower: lo.iter().sum(),
        sum_upper: hi.iter().sum(),
    })?;
    if !best.value.is_finite() {
        return Err(OptimizeError::Overflow {
            log_value: f64::INFINITY,
        });
    }
    finish(point_for(best.row, best.walk), best.value, evaluations, radius, range)
}

#[cfg(test)]
mod tests {
    use super::super::tests::term;
    use super::super::{minimize, MinimizeOptions};
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn agrees_with_closed_form() {
        let obj = Objective::single(term(&[1.0, 2.0, 3.0, 1.0], &[0.0, 0.0]));
        let res = 1e-3;
        let brute = brute_force_minimize(&obj, 0.0, &BoxBounds::unbounded(2), res).unwrap();
        let exact = minimize(&obj, 0.0, &BoxBounds::unbounded(2), &MinimizeOptions::default()).unwrap();
        let dist = brute
            .x_star
            .iter()
            .zip(&exact.x_star)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist <= res * 2f64.sqrt(), "{dist}");
        assert!(brute.value >= exact.value);
    }

    #[test]
    fn symmetric_example_hits_origin() {
        let obj = Objective::single(term(&[2.0, 1.0, 1.0, 2.0], &[0.2, 0.2]));
        let brute = brute_force_minimize(&obj, 0.0, &BoxBounds::unbounded(2), 0.01).unwrap();
        assert!(brute.x_star.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn box_clamps_first_coordinate() {
        let obj = Objective::single(term(&[1.0, 2.0, 3.0, 1.0], &[0.0, 0.0]));
        let cap = 0.85f64.ln();
        let bounds = BoxBounds::new(vec![f64::NEG_INFINITY; 2], vec![cap, f64::INFINITY]).unwrap();
        let brute = brute_force_minimize(&obj, 0.0, &bounds, 1e-4).unwrap();
        assert_relative_eq!(brute.x_star[0], cap, epsilon = 1e-4);
        assert_relative_eq!(brute.x_star[1], -cap, epsilon = 1e-4);
    }

    #[test]
    fn negative_control_is_flat() {
        let obj = Objective::single(term(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0]));
        let brute = brute_force_minimize(&obj, 0.0, &BoxBounds::unbounded(2), 0.01).unwrap();
        assert!(brute.is_flat(1e-12));
        assert_relative_eq!(brute.value, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn three_dimensional_agreement() {
        let obj = Objective::single(term(
            &[1.0, 0.5, 0.0, 0.0, 1.2, 0.3, 0.8, 0.0, 0.9],
            &[0.1, 0.0, 0.4],
        ));
        let brute = brute_force_minimize(&obj, 0.7, &BoxBounds::unbounded(3), 2e-3).unwrap();
        let exact = minimize(&obj, 0.7, &BoxBounds::unbounded(3), &MinimizeOptions::default()).unwrap();
        assert!((brute.value - exact.value) / exact.value <= 1e-5);
        assert!(brute.value >= exact.value * (1.0 - 1e-14));
    }

    #[test]
    fn zero_objective_rejected() {
        // Positive diagonal is enforced for terms, so degeneracy cannot be
        // built from a valid term; resolution errors are still reported.
        let obj = Objective::single(term(&[1.0], &[0.0]));
        assert!(matches!(
            brute_force_minimize(&obj, 0.0, &BoxBounds::unbounded(1), 0.0),
            Err(OptimizeError::InvalidResolution(_))
        ));
    }
}
