//! JSON configuration.

use std::path::{Path, PathBuf};

use gridabs_core::abstraction::{default_substeps, Plant, UniformGrid};
use gridabs_core::models::{lookup, ModelSpec};
use gridabs_core::optimizer::{BoxBounds, Objective};
use gridabs_core::{GridParameter, Matrix, PredictorTerm};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Predictor terms `(A, p)` used instead of the model's growth bounds.
    #[serde(default)]
    pub terms: Option<Vec<TermSpec>>,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub optimize: OptimizeSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub substeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub a: Vec<Vec<f64>>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    #[serde(default)]
    pub periodic: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub subdivisions: Option<Vec<usize>>,
    #[serde(default)]
    pub volume_gamma: Option<f64>,
    /// Alternative to `volume_gamma`: `γ = ln(domain volume / target_cells)`.
    #[serde(default)]
    pub target_cells: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSpec {
    /// Bounds on η, not on its logarithm.
    #[serde(default)]
    pub box_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub box_upper: Option<Vec<f64>>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub transitions_path: Option<PathBuf>,
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    /// Defaults to `<transitions_path>.stats.json` when transitions are written.
    #[serde(default)]
    pub stats_path: Option<PathBuf>,
}

fn config_err(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn check_finite(path: &str, v: &[f64]) -> Result<(), CliError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(config_err(&format!("{path}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

/// How the grid is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum GridChoice {
    Eta(Vec<f64>),
    Subdivisions(Vec<usize>),
    Gamma(f64),
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn model(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| config_err("model", "missing"))
    }

    pub fn plant(&self) -> Result<Plant, CliError> {
        lookup(self.model()?).map_err(|e| config_err("model", e))
    }

    pub fn z(&self) -> Result<Vec<f64>, CliError> {
        match (&self.model, &self.terms) {
            (Some(m), _) => Ok(m.z.clone()),
            (None, Some(t)) => Ok(vec![0.0; t.first().map_or(0, |t| t.p.len())]),
            (None, None) => Err(config_err("model", "missing")),
        }
    }

    pub fn domain(&self) -> Result<&DomainSpec, CliError> {
        let d = self.domain.as_ref().ok_or_else(|| config_err("domain", "missing"))?;
        check_finite("domain.lb", &d.lb)?;
        check_finite("domain.ub", &d.ub)?;
        if d.lb.len() != d.ub.len() {
            return Err(config_err("domain.ub", "length differs from domain.lb"));
        }
        if let Some(i) = (0..d.lb.len()).find(|&i| d.lb[i] >= d.ub[i]) {
            return Err(config_err(&format!("domain.ub[{i}]"), "must exceed domain.lb"));
        }
        if let Some(p) = &d.periodic {
            if p.len() != d.lb.len() {
                return Err(config_err("domain.periodic", "length differs from domain.lb"));
            }
        }
        Ok(d)
    }

    pub fn grid_choice(&self) -> Result<GridChoice, CliError> {
        let g = &self.grid;
        let given = [
            g.eta.is_some(),
            g.subdivisions.is_some(),
            g.volume_gamma.is_some(),
            g.target_cells.is_some(),
        ];
        match given.iter().filter(|&&b| b).count() {
            0 => {
                return Err(config_err(
                    "grid",
                    "one of eta, subdivisions, volume_gamma, target_cells is required",
                ))
            }
            1 => {}
            _ => {
                return Err(config_err(
                    "grid",
                    "give exactly one of eta, subdivisions, volume_gamma, target_cells",
                ))
            }
        }
        if let Some(eta) = &g.eta {
            check_finite("grid.eta", eta)?;
            return Ok(GridChoice::Eta(eta.clone()));
        }
        if let Some(s) = &g.subdivisions {
            return Ok(GridChoice::Subdivisions(s.clone()));
        }
        if let Some(gamma) = g.volume_gamma {
            if !gamma.is_finite() {
                return Err(config_err("grid.volume_gamma", "must be finite"));
            }
            return Ok(GridChoice::Gamma(gamma));
        }
        let target = g.target_cells.expect("one grid field is present");
        if !(target.is_finite() && target > 0.0) {
            return Err(config_err("grid.target_cells", "must be positive"));
        }
        let d = self.domain()?;
        let volume: f64 = d.lb.iter().zip(&d.ub).map(|(l, u)| u - l).product();
        Ok(GridChoice::Gamma((volume / target).ln()))
    }

    fn periodic(&self, n: usize) -> Result<Vec<bool>, CliError> {
        Ok(self.domain()?.periodic.clone().unwrap_or_else(|| vec![false; n]))
    }

    /// Grid for commands that need concrete cells.
    pub fn grid(&self) -> Result<UniformGrid, CliError> {
        let d = self.domain()?;
        let n = d.lb.len();
        let periodic = self.periodic(n)?;
        let grid = match self.grid_choice()? {
            GridChoice::Eta(eta) => {
                if eta.len() != n {
                    return Err(config_err("grid.eta", format!("expected {n} components")));
                }
                let eta = GridParameter::new(eta).map_err(|e| config_err("grid.eta", e))?;
                UniformGrid::new(d.lb.clone(), d.ub.clone(), eta, periodic)
                    .map_err(|e| config_err("grid.eta", e))?
            }
            GridChoice::Subdivisions(s) => {
                if s.len() != n {
                    return Err(config_err("grid.subdivisions", format!("expected {n} components")));
                }
                UniformGrid::from_subdivisions(d.lb.clone(), d.ub.clone(), &s, periodic)
                    .map_err(|e| config_err("grid.subdivisions", e))?
            }
            GridChoice::Gamma(_) => {
                return Err(config_err(
                    "grid",
                    "this command needs eta or subdivisions (volume_gamma is for optimize)",
                ))
            }
        };
        self.check_dim(grid.dim(), "domain.lb")?;
        Ok(grid)
    }

    pub fn gamma(&self) -> Result<f64, CliError> {
        match self.grid_choice()? {
            GridChoice::Gamma(g) => Ok(g),
            _ => Err(config_err("grid", "optimize needs volume_gamma or target_cells")),
        }
    }

    fn check_dim(&self, n: usize, what: &str) -> Result<(), CliError> {
        let expected = self.z()?.len();
        if n != expected {
            return Err(config_err(what, format!("has dimension {n}, model has {expected}")));
        }
        Ok(())
    }

    /// Predictor terms from `terms` if given, otherwise from the model.
    pub fn predictor_terms(&self) -> Result<Vec<PredictorTerm>, CliError> {
        if let Some(terms) = &self.terms {
            if terms.is_empty() {
                return Err(config_err("terms", "must not be empty"));
            }
            return terms
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let path = format!("terms[{k}]");
                    let n = t.p.len();
                    if t.a.len() != n || t.a.iter().any(|r| r.len() != n) {
                        return Err(config_err(&path, "a must be square with the length of p"));
                    }
                    let a = Matrix::from_fn(n, n, |i, j| t.a[i][j]);
                    PredictorTerm::new(a, t.p.clone()).map_err(|e| config_err(&path, e))
                })
                .collect();
        }
        let plant = self.plant()?;
        plant.predictor_terms(&self.z()?).map_err(|e| config_err("model.z", e))
    }

    pub fn objective(&self) -> Result<Objective, CliError> {
        Objective::new(self.predictor_terms()?).map_err(|e| config_err("terms", e))
    }

    pub fn box_bounds(&self, n: usize) -> Result<BoxBounds, CliError> {
        let o = &self.optimize;
        for (name, b) in [("optimize.box_lower", &o.box_lower), ("optimize.box_upper", &o.box_upper)] {
            if let Some(b) = b {
                if b.len() != n {
                    return Err(config_err(name, format!("expected {n} components")));
                }
            }
        }
        BoxBounds::from_eta_bounds(o.box_lower.as_deref(), o.box_upper.as_deref(), n)
            .map_err(|e| config_err("optimize", e))
    }

    pub fn substeps(&self, tau: f64) -> Result<usize, CliError> {
        match self.substeps {
            Some(0) => Err(config_err("substeps", "must be at least 1")),
            Some(s) => Ok(s),
            None => Ok(default_substeps(tau)),
        }
    }
}
