//! Built-in plants.
//!
//! | name | dynamics | growth bound |
//! |------|----------|--------------|
//! | `linear` | `ẋ = Mx + Bu` | `L = linear_growth_matrix(M)` |
//! | `decoupled` | `ẋᵢ = aᵢxᵢ + uᵢ` | `L = diag(a)` |
//! | `double_pendulum_cart` | point-mass double pendulum on a cart, input = cart acceleration | user supplied |
//!
//! Unless given explicitly, `v = ∫₀^τ e^{Ls} ds · w`.
//!
//! The double pendulum uses the textbook Lagrangian model with massless rods
//! and point masses, angles measured from the upright position. It is an
//! externally sourced model kept for experiments; its growth matrices are not
//! derived here and must come with the spec.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractionError, Plant, VectorField};
use crate::growth::{check_nonnegative, disturbance_offset, GrowthBound, GrowthError};
use crate::numat::{check_square, Matrix, NumatError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model '{0}' (known: linear, decoupled, double_pendulum_cart)")]
    Unknown(String),
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("parameter '{name}': {reason}")]
    InvalidParam { name: String, reason: String },
    #[error("inputs: {0}")]
    InvalidInputs(String),
    #[error("growth: {0}")]
    InvalidGrowth(String),
    #[error("sampling time must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinspaceAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Finite input set: explicit vectors, or the product of per-axis linspaces
/// with the first axis varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    List(Vec<Vec<f64>>),
    Linspace { linspace: Vec<LinspaceAxis> },
}

impl InputSpec {
    pub fn expand(&self) -> Result<Vec<Vec<f64>>, ModelError> {
        let inputs = match self {
            InputSpec::List(list) => list.clone(),
            InputSpec::Linspace { linspace } => {
                let mut out: Vec<Vec<f64>> = vec![vec![]];
                for (axis, a) in linspace.iter().enumerate() {
                    if a.count == 0 || !(a.lo.is_finite() && a.hi.is_finite()) || a.lo > a.hi {
                        return Err(ModelError::InvalidInputs(format!(
                            "linspace axis {axis} needs finite lo <= hi and count >= 1"
                        )));
                    }
                    let pts: Vec<f64> = (0..a.count)
                        .map(|k| {
                            if a.count == 1 {
                                a.lo
                            } else {
                                a.lo + (a.hi - a.lo) * k as f64 / (a.count - 1) as f64
                            }
                        })
                        .collect();
                    out = out
                        .into_iter()
                        .flat_map(|prefix| {
                            pts.iter().map(move |&p| {
                                let mut v = prefix.clone();
                                v.push(p);
                                v
                            })
                        })
                        .collect();
                }
                out
            }
        };
        if inputs.is_empty() {
            return Err(ModelError::InvalidInputs("input set is empty".into()));
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInputs("non-finite input value".into()));
        }
        Ok(inputs)
    }
}

/// Explicit growth bound data for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSpec {
    pub l: Vec<Vec<f64>>,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    pub inputs: InputSpec,
    pub tau: f64,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    /// One entry per input, or a single entry shared by all inputs.
    /// Overrides the model's own growth bound.
    #[serde(default)]
    pub growth: Option<Vec<GrowthSpec>>,
}

impl ModelSpec {
    fn number(&self, key: &str) -> Result<f64, ModelError> {
        match self.params.get(key) {
            None => Err(ModelError::MissingParam(key.into())),
            Some(ParamValue::Number(x)) if x.is_finite() => Ok(*x),
            Some(_) => Err(invalid(key, "expected a finite number")),
        }
    }

    fn vector(&self, key: &str) -> Result<Vec<f64>, ModelError> {
        match self.params.get(key) {
            None => Err(ModelError::MissingParam(key.into())),
            Some(ParamValue::Vector(v)) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => {
                Ok(v.clone())
            }
            Some(ParamValue::Number(x)) if x.is_finite() => Ok(vec![*x]),
            Some(_) => Err(invalid(key, "expected a nonempty finite vector")),
        }
    }

    fn matrix(&self, key: &str) -> Result<Matrix, ModelError> {
        match self.params.get(key) {
            None => Err(ModelError::MissingParam(key.into())),
            Some(ParamValue::Matrix(rows)) => to_matrix(rows).map_err(|r| invalid(key, &r)),
            Some(ParamValue::Vector(v)) => {
                to_matrix(&v.iter().map(|x| vec![*x]).collect::<Vec<_>>()).map_err(|r| invalid(key, &r))
            }
            Some(ParamValue::Number(x)) => to_matrix(&[vec![*x]]).map_err(|r| invalid(key, &r)),
        }
    }
}

fn invalid(name: &str, reason: &str) -> ModelError {
    ModelError::InvalidParam {
        name: name.into(),
        reason: reason.into(),
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Matrix, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err("expected a nonempty rectangular matrix".into());
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err("non-finite entry".into());
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// `Lᵢᵢ = Mᵢᵢ`, `Lᵢⱼ = |Mᵢⱼ|` for `i ≠ j`.
pub fn linear_growth_matrix(m: &Matrix) -> Result<Matrix, NumatError> {
    let n = check_square(m)?;
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j {
            m[(i, j)]
        } else {
            m[(i, j)].abs()
        }
    }))
}

struct Linear {
    m: Matrix,
    b: Matrix,
}

impl VectorField for Linear {
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        for (i, d) in dx.iter_mut().enumerate() {
            *d = (0..x.len()).map(|j| self.m[(i, j)] * x[j]).sum::<f64>()
                + (0..u.len()).map(|j| self.b[(i, j)] * u[j]).sum::<f64>();
        }
    }
}

struct Decoupled {
    a: Vec<f64>,
}

impl VectorField for Decoupled {
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        for i in 0..x.len() {
            dx[i] = self.a[i] * x[i] + u[i];
        }
    }
}

/// State `(φ₁, φ₂, φ̇₁, φ̇₂)`, input cart acceleration.
struct DoublePendulumCart {
    m1: f64,
    m2: f64,
    l1: f64,
    l2: f64,
    g: f64,
}

impl VectorField for DoublePendulumCart {
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let Self { m1, m2, l1, l2, g } = *self;
        let (p1, p2, w1, w2) = (x[0], x[1], x[2], x[3]);
        let a = u[0];
        let (s12, c12) = (p1 - p2).sin_cos();
        let m11 = (m1 + m2) * l1 * l1;
        let m12 = m2 * l1 * l2 * c12;
        let m22 = m2 * l2 * l2;
        let f1 = -m2 * l1 * l2 * s12 * w2 * w2 + (m1 + m2) * l1 * (g * p1.sin() - a * p1.cos());
        let f2 = m2 * l1 * l2 * s12 * w1 * w1 + m2 * l2 * (g * p2.sin() - a * p2.cos());
        let det = m11 * m22 - m12 * m12;
        dx[0] = w1;
        dx[1] = w2;
        dx[2] = (m22 * f1 - m12 * f2) / det;
        dx[3] = (m11 * f2 - m12 * f1) / det;
    }
}

fn check_inputs(inputs: &[Vec<f64>], dim: usize) -> Result<(), ModelError> {
    match inputs.iter().position(|u| u.len() != dim) {
        Some(k) => Err(ModelError::InvalidInputs(format!(
            "input {k} has length {}, expected {dim}",
            inputs[k].len()
        ))),
        None => Ok(()),
    }
}

fn explicit_growth(spec: &ModelSpec, n: usize, count: usize) -> Result<Option<Vec<GrowthBound>>, ModelError> {
    let Some(list) = &spec.growth else {
        return Ok(None);
    };
    if list.len() != 1 && list.len() != count {
        return Err(ModelError::InvalidGrowth(format!(
            "{} entries given, expected 1 or {count}",
            list.len()
        )));
    }
    let bounds = list
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let l = to_matrix(&g.l).map_err(|r| ModelError::InvalidGrowth(format!("entry {k}: {r}")))?;
            if l.nrows() != n || l.ncols() != n {
                return Err(ModelError::InvalidGrowth(format!("entry {k}: L must be {n}x{n}")));
            }
            Ok(match &g.v {
                Some(v) => GrowthBound::new(l, v.clone(), spec.tau)?,
                None => GrowthBound::from_disturbance(l, &spec.w, spec.tau)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(Some(if bounds.len() == count {
        bounds
    } else {
        vec![bounds[0].clone(); count]
    }))
}

/// Builds the plant described by `spec`.
pub fn lookup(spec: &ModelSpec) -> Result<Plant, ModelError> {
    if !(spec.tau.is_finite() && spec.tau > 0.0) {
        return Err(ModelError::InvalidTau(spec.tau));
    }
    let inputs = spec.inputs.expand()?;
    let count = inputs.len();
    let (n, rhs, default_l): (usize, Arc<dyn VectorField>, Option<Matrix>) = match spec.name.as_str() {
        "linear" => {
            let m = spec.matrix("M")?;
            let n = m.nrows();
            if m.ncols() != n {
                return Err(invalid("M", "must be square"));
            }
            let b = match spec.params.get("B") {
                Some(_) => spec.matrix("B")?,
                None => Matrix::identity(n, n),
            };
            if b.nrows() != n {
                return Err(invalid("B", &format!("must have {n} rows")));
            }
            check_inputs(&inputs, b.ncols())?;
            let l = linear_growth_matrix(&m).map_err(GrowthError::from)?;
            (n, Arc::new(Linear { m, b }), Some(l))
        }
        "decoupled" => {
            let a = spec.vector("a")?;
            let n = a.len();
            check_inputs(&inputs, n)?;
            let l = Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(&a));
            (n, Arc::new(Decoupled { a }), Some(l))
        }
        "double_pendulum_cart" => {
            let get = |k: &str, default: f64| match spec.params.get(k) {
                None => Ok(default),
                Some(_) => spec.number(k),
            };
            let model = DoublePendulumCart {
                m1: get("m1", 1.0)?,
                m2: get("m2", 1.0)?,
                l1: get("l1", 0.5)?,
                l2: get("l2", 0.5)?,
                g: get("g", 9.81)?,
            };
            for (k, v) in [("m1", model.m1), ("m2", model.m2), ("l1", model.l1), ("l2", model.l2)] {
                if v <= 0.0 {
                    return Err(invalid(k, "must be positive"));
                }
            }
            check_inputs(&inputs, 1)?;
            (4, Arc::new(model), None)
        }
        other => return Err(ModelError::Unknown(other.into())),
    };
    check_nonnegative("w", &spec.w, n)?;
    check_nonnegative("z", &spec.z, n)?;
    let growth = match (explicit_growth(spec, n, count)?, default_l) {
        (Some(g), _) => g,
        (None, Some(l)) => {
            let v = disturbance_offset(&l, &spec.w, spec.tau)?;
            vec![GrowthBound::new(l, v, spec.tau)?; count]
        }
        (None, None) => {
            return Err(ModelError::InvalidGrowth(format!(
                "model '{}' needs explicit growth bounds",
                spec.name
            )))
        }
    };
    Ok(Plant::new(spec.name.clone(), inputs, rhs, growth, spec.w.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{default_substeps, integrate};
    use crate::numat::{expm, integral_expm};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn spec(name: &str, params: &[(&str, ParamValue)], inputs: Vec<Vec<f64>>, w: Vec<f64>, tau: f64) -> ModelSpec {
        let n = w.len();
        ModelSpec {
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            inputs: InputSpec::List(inputs),
            tau,
            w,
            z: vec![0.0; n],
            growth: None,
        }
    }

    fn mat(rows: &[&[f64]]) -> ParamValue {
        ParamValue::Matrix(rows.iter().map(|r| r.to_vec()).collect())
    }

    #[test]
    fn growth_matrix_examples() {
        let m = Matrix::from_row_slice(2, 2, &[-1.0, -2.0, 3.0, -4.0]);
        assert_eq!(
            linear_growth_matrix(&m).unwrap(),
            Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 3.0, -4.0])
        );
        let pos = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 4.0]);
        assert_eq!(linear_growth_matrix(&pos).unwrap(), pos);
        let diag = Matrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, 5.0]);
        assert_eq!(linear_growth_matrix(&diag).unwrap(), diag);
        assert!(linear_growth_matrix(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn linear_lookup_double_integrator() {
        let s = spec(
            "linear",
            &[("M", mat(&[&[0.0, 1.0], &[0.0, 0.0]])), ("B", mat(&[&[0.0], &[1.0]]))],
            vec![vec![0.0]],
            vec![0.0, 0.0],
            0.1,
        );
        let p = lookup(&s).unwrap();
        assert_eq!(p.growth()[0].l(), &Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(p.growth()[0].v(), &[0.0, 0.0]);
    }

    #[test]
    fn decoupled_offset() {
        let s = spec(
            "decoupled",
            &[("a", ParamValue::Vector(vec![-1.0, -2.0]))],
            vec![vec![0.0, 0.0]],
            vec![0.1, 0.1],
            0.5,
        );
        let p = lookup(&s).unwrap();
        let v = p.growth()[0].v();
        assert_relative_eq!(v[0], (1.0 - (-0.5f64).exp()) * 0.1, max_relative = 1e-13);
        assert_relative_eq!(v[1], (1.0 - (-1.0f64).exp()) / 2.0 * 0.1, max_relative = 1e-13);
    }

    #[test]
    fn lookup_errors() {
        let s = spec("nope", &[], vec![vec![0.0]], vec![0.0], 0.1);
        assert!(matches!(lookup(&s), Err(ModelError::Unknown(_))));
        let s = spec("linear", &[], vec![vec![0.0]], vec![0.0], 0.1);
        assert!(matches!(lookup(&s), Err(ModelError::MissingParam(_))));
        let s = spec("decoupled", &[("a", ParamValue::Vector(vec![-1.0]))], vec![vec![0.0]], vec![0.0], 0.0);
        assert!(matches!(lookup(&s), Err(ModelError::InvalidTau(_))));
        let s = spec("decoupled", &[("a", ParamValue::Vector(vec![-1.0]))], vec![vec![0.0, 1.0]], vec![0.0], 0.1);
        assert!(matches!(lookup(&s), Err(ModelError::InvalidInputs(_))));
        let s = spec("decoupled", &[("a", ParamValue::Vector(vec![-1.0]))], vec![vec![0.0]], vec![-0.1], 0.1);
        assert!(matches!(lookup(&s), Err(ModelError::Growth(_))));
        let s = spec("double_pendulum_cart", &[], vec![vec![0.0]], vec![0.0; 4], 0.01);
        assert!(matches!(lookup(&s), Err(ModelError::InvalidGrowth(_))));
    }

    #[test]
    fn linspace_inputs() {
        let spec = InputSpec::Linspace {
            linspace: vec![
                LinspaceAxis { lo: -1.0, hi: 1.0, count: 3 },
                LinspaceAxis { lo: 0.0, hi: 0.0, count: 1 },
            ],
        };
        assert_eq!(
            spec.expand().unwrap(),
            vec![vec![-1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]
        );
        let five = InputSpec::Linspace {
            linspace: vec![LinspaceAxis { lo: -3.5 * 9.81, hi: 3.5 * 9.81, count: 5 }],
        };
        let u = five.expand().unwrap();
        assert_eq!(u.len(), 5);
        assert_relative_eq!(u[2][0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_integrate_matches_closed_form() {
        let m = Matrix::from_row_slice(2, 2, &[-1.5, 0.8, -0.6, -1.2]);
        let s = spec(
            "linear",
            &[("M", mat(&[&[-1.5, 0.8], &[-0.6, -1.2]])), ("B", mat(&[&[0.0], &[1.0]]))],
            vec![vec![0.3]],
            vec![0.0, 0.0],
            0.1,
        );
        let p = lookup(&s).unwrap();
        for tau in [0.01, 0.05, 0.1] {
            let x0 = [0.7, -0.4];
            let x = integrate(&p, &x0, &[0.3], tau, default_substeps(tau)).unwrap();
            let exact = expm(&m, tau).unwrap() * DVector::from_column_slice(&x0)
                + integral_expm(&m, tau).unwrap() * DVector::from_column_slice(&[0.0, 0.3]);
            let err = (DVector::from_column_slice(&x) - &exact).norm() / exact.norm();
            assert!(err <= 1e-10, "tau {tau}: {err}");
        }
    }

    #[test]
    fn explicit_growth_shared_and_per_input() {
        let mut s = spec("double_pendulum_cart", &[], vec![vec![-1.0], vec![1.0]], vec![0.0, 0.0, 0.01, 0.01], 0.01);
        let l = vec![
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![40.0, 30.0, 0.0, 0.1],
            vec![40.0, 50.0, 0.1, 0.0],
        ];
        s.growth = Some(vec![GrowthSpec { l: l.clone(), v: None }]);
        let p = lookup(&s).unwrap();
        assert_eq!(p.growth().len(), 2);
        assert!(p.growth()[0].v()[2] > 0.0);
        s.growth = Some(vec![GrowthSpec { l: l.clone(), v: Some(vec![0.0; 4]) }; 3]);
        assert!(matches!(lookup(&s), Err(ModelError::InvalidGrowth(_))));
    }

    #[test]
    fn pendulum_hangs_still_and_falls_when_tipped() {
        let mut s = spec("double_pendulum_cart", &[], vec![vec![0.0]], vec![0.0; 4], 0.01);
        s.growth = Some(vec![GrowthSpec { l: vec![vec![0.0; 4]; 4], v: None }]);
        let p = lookup(&s).unwrap();
        let up = integrate(&p, &[0.0; 4], &[0.0], 0.5, 50).unwrap();
        assert!(up.iter().all(|v| v.abs() < 1e-15));
        let tipped = integrate(&p, &[0.05, 0.05, 0.0, 0.0], &[0.0], 0.2, 20).unwrap();
        assert!(tipped[0] > 0.05);
        // Pushing the cart right tips the pendulum left.
        let pushed = integrate(&p, &[0.0; 4], &[1.0], 0.1, 10).unwrap();
        assert!(pushed[0] < 0.0);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let json = r#"{"name":"linear","params":{"M":[[-1,0.5],[0.2,-2]],"B":[[0],[1]]},
            "inputs":{"linspace":[{"lo":-0.3,"hi":0.3,"count":3}]},"tau":0.2,"w":[0.01,0.01],"z":[0,0]}"#;
        let s: ModelSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.inputs.expand().unwrap().len(), 3);
        let p = lookup(&s).unwrap();
        assert_eq!(p.inputs().len(), 3);
        assert_eq!(p.dim(), 2);
    }
}
