use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use gridabs_core::abstraction::{build, compare, AbstractionStats, TransitionWriter, UniformGrid};
use gridabs_core::optimizer::{
    certify_growth_family, certify_objective, minimize, CertificateReport, MinimizeOptions,
};
use gridabs_core::predictor::{predict_abstraction_total, predict_family, predict_single};
use gridabs_core::GridParameter;
use serde::Serialize;

use crate::config::Config;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Predict,
    Optimize,
    Abstract,
    Compare,
    Certify,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub csv: Option<PathBuf>,
    pub transitions: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(p) = &self.csv {
            cfg.output.csv_path = Some(p.clone());
        }
        if let Some(p) = &self.transitions {
            cfg.output.transitions_path = Some(p.clone());
        }
    }
}

/// Runs `command` on a worker pool capped at `overrides.threads` and
/// returns the printed report.
pub fn run(command: Command, mut cfg: Config, overrides: &Overrides) -> Result<String, CliError> {
    overrides.apply(&mut cfg);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = overrides.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| match command {
        Command::Predict => cmd_predict(&cfg).map(|r| r.to_string()),
        Command::Optimize => cmd_optimize(&cfg).map(|r| r.to_string()),
        Command::Abstract => cmd_abstract(&cfg).map(|r| r.to_string()),
        Command::Compare => cmd_compare(&cfg).map(|r| r.to_string()),
        Command::Certify => cmd_certify(&cfg).map(|r| r.to_string()),
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn csv_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Appends `row`, writing `header` first if the file is new or empty.
fn append_csv(path: &Path, header: &str, row: &str) -> Result<(), CliError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let empty = f.metadata().map_err(io_err(path))?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(header);
        text.push('\n');
    }
    text.push_str(row);
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

fn eta_header(n: usize) -> String {
    (1..=n).map(|i| format!("eta_{i}")).collect::<Vec<_>>().join(",")
}

fn eta_row(eta: &[f64]) -> String {
    eta.iter().map(|&e| csv_num(e)).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictReport {
    pub eta: Vec<f64>,
    pub cells: u64,
    /// `E` per input (or per configured term).
    pub per_input: Vec<f64>,
    /// `Ẽ`, the sum of `per_input`.
    pub per_pair: f64,
    pub predicted: f64,
}

impl fmt::Display for PredictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eta            {}", fmt_vec(&self.eta))?;
        writeln!(f, "cells          {}", self.cells)?;
        for (u, e) in self.per_input.iter().enumerate() {
            writeln!(f, "E[{u}]           {e}")?;
        }
        writeln!(f, "E_family       {}", self.per_pair)?;
        writeln!(f, "predicted      {}", self.predicted)
    }
}

fn predict_on(cfg: &Config, grid: &UniformGrid) -> Result<PredictReport, CliError> {
    let terms = cfg.predictor_terms()?;
    let eta = grid.eta();
    let config = |e: gridabs_core::predictor::PredictorError| CliError::Config(e.to_string());
    let per_input = terms
        .iter()
        .map(|t| predict_single(t, eta))
        .collect::<Result<Vec<_>, _>>()
        .map_err(config)?;
    Ok(PredictReport {
        eta: eta.to_vec(),
        cells: grid.num_cells(),
        per_input,
        per_pair: predict_family(&terms, eta).map_err(config)?,
        predicted: predict_abstraction_total(&terms, eta, grid.num_cells()).map_err(config)?,
    })
}

pub fn cmd_predict(cfg: &Config) -> Result<PredictReport, CliError> {
    let grid = cfg.grid()?;
    let report = predict_on(cfg, &grid)?;
    if let Some(path) = &cfg.output.csv_path {
        let header = format!("{},per_pair,cells,predicted", eta_header(report.eta.len()));
        let row = format!(
            "{},{},{},{}",
            eta_row(&report.eta),
            csv_num(report.per_pair),
            report.cells,
            csv_num(report.predicted)
        );
        append_csv(path, &header, &row)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnappedGrid {
    pub subdivisions: Vec<usize>,
    pub eta: Vec<f64>,
    pub per_pair: f64,
    pub cells: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub gamma: f64,
    pub eta_star: Vec<f64>,
    pub per_pair: f64,
    pub certificate: String,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Present when a domain is configured.
    pub snapped: Option<SnappedGrid>,
}

impl fmt::Display for OptimizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gamma          {}", self.gamma)?;
        writeln!(f, "eta*           {}", fmt_vec(&self.eta_star))?;
        writeln!(f, "E_family(eta*) {}", self.per_pair)?;
        writeln!(f, "certificate    {}", self.certificate)?;
        writeln!(f, "iterations     {}", self.iterations)?;
        writeln!(f, "kkt_residual   {:e}", self.kkt_residual)?;
        if let Some(s) = &self.snapped {
            let k: Vec<String> = s.subdivisions.iter().map(|k| k.to_string()).collect();
            writeln!(f, "snapped        [{}]", k.join(", "))?;
            writeln!(f, "eta_snapped    {}", fmt_vec(&s.eta))?;
            writeln!(f, "E_family(snap) {}", s.per_pair)?;
            writeln!(f, "cells_snapped  {}", s.cells)?;
        }
        Ok(())
    }
}

pub fn cmd_optimize(cfg: &Config) -> Result<OptimizeReport, CliError> {
    let gamma = cfg.gamma()?;
    let obj = cfg.objective()?;
    let n = obj.dim();
    let bounds = cfg.box_bounds(n)?;
    let mut opts = MinimizeOptions::default();
    if let Some(t) = cfg.optimize.tol {
        if !(t.is_finite() && t > 0.0) {
            return Err(CliError::Config("optimize.tol: must be positive".into()));
        }
        opts.tol = t;
    }
    if let Some(m) = cfg.optimize.max_iterations {
        opts.max_iterations = m;
    }
    let sol = minimize(&obj, gamma, &bounds, &opts)?;
    let snapped = match &cfg.domain {
        None => None,
        Some(_) => {
            let d = cfg.domain()?;
            if d.lb.len() != n {
                return Err(CliError::Config(format!("domain.lb: expected {n} components")));
            }
            let subdivisions: Vec<usize> = (0..n)
                .map(|i| (((d.ub[i] - d.lb[i]) / sol.eta_star[i]).round() as usize).max(1))
                .collect();
            let eta: Vec<f64> = (0..n)
                .map(|i| (d.ub[i] - d.lb[i]) / subdivisions[i] as f64)
                .collect();
            let grid_eta = GridParameter::new(eta.clone()).map_err(|e| CliError::Other(e.to_string()))?;
            Some(SnappedGrid {
                cells: subdivisions.iter().map(|&k| k as u64).product(),
                per_pair: predict_family(obj.terms(), &grid_eta)
                    .map_err(|e| CliError::Other(e.to_string()))?,
                subdivisions,
                eta,
            })
        }
    };
    Ok(OptimizeReport {
        gamma,
        eta_star: sol.eta_star.to_vec(),
        per_pair: sol.value,
        certificate: sol.certificate.to_string(),
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        snapped,
    })
}

/// Everything in a stats file; wall time is left out so files are
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsFile {
    pub model: String,
    pub counts: Vec<usize>,
    pub eta: Vec<f64>,
    pub substeps: usize,
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub stats: AbstractionStats,
    pub transitions_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractReport {
    pub file: StatsFile,
    pub wall_time: Duration,
    pub transitions_path: Option<PathBuf>,
    pub stats_path: Option<PathBuf>,
}

impl fmt::Display for AbstractReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.file.stats;
        let counts: Vec<String> = self.file.counts.iter().map(|k| k.to_string()).collect();
        writeln!(f, "model          {}", self.file.model)?;
        writeln!(f, "grid           {}", counts.join("x"))?;
        writeln!(f, "cells          {}", s.num_cells)?;
        writeln!(f, "inputs         {}", s.num_inputs)?;
        writeln!(f, "transitions    {}", s.total_transitions)?;
        writeln!(f, "blocked_pairs  {}", s.blocked_pairs)?;
        for (u, t) in s.per_input_transitions.iter().enumerate() {
            writeln!(f, "transitions[{u}] {t} (blocked {})", s.per_input_blocked[u])?;
        }
        writeln!(f, "wall_time      {:.3}s", self.wall_time.as_secs_f64())?;
        match (self.file.transitions_bytes, &self.transitions_path) {
            (Some(b), Some(p)) => writeln!(f, "memory         {b} bytes (transition file {})", p.display())?,
            _ => writeln!(f, "memory         n/a (no transition file)")?,
        }
        if let Some(p) = &self.stats_path {
            writeln!(f, "stats          {}", p.display())?;
        }
        Ok(())
    }
}

fn run_build(cfg: &Config) -> Result<(UniformGrid, AbstractReport), CliError> {
    let plant = cfg.plant()?;
    let grid = cfg.grid()?;
    let z = cfg.z()?;
    let substeps = cfg.substeps(plant.tau())?;
    let transitions_path = cfg.output.transitions_path.clone();
    let (stats, bytes) = match &transitions_path {
        Some(path) => {
            let file = File::create(path).map_err(io_err(path))?;
            let mut writer = TransitionWriter::new(BufWriter::new(file));
            let stats = build(&grid, &plant, &z, substeps, Some(&mut writer))?;
            (stats, Some(writer.bytes_written()))
        }
        None => (build(&grid, &plant, &z, substeps, None)?, None),
    };
    let stats_path = cfg.output.stats_path.clone().or_else(|| {
        transitions_path.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".stats.json");
            PathBuf::from(s)
        })
    });
    let wall_time = stats.wall_time;
    let file = StatsFile {
        model: plant.name().to_string(),
        counts: grid.counts().to_vec(),
        eta: grid.eta().to_vec(),
        substeps,
        seed: cfg.seed,
        stats,
        transitions_bytes: bytes,
    };
    if let Some(path) = &stats_path {
        let mut text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    Ok((
        grid,
        AbstractReport {
            file,
            wall_time,
            transitions_path,
            stats_path,
        },
    ))
}

pub fn cmd_abstract(cfg: &Config) -> Result<AbstractReport, CliError> {
    run_build(cfg).map(|(_, r)| r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub eta: Vec<f64>,
    pub predicted: f64,
    pub actual: u64,
    pub rel_err: f64,
    pub blocked_pairs: u64,
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eta            {}", fmt_vec(&self.eta))?;
        writeln!(f, "predicted      {}", self.predicted)?;
        writeln!(f, "actual         {}", self.actual)?;
        writeln!(f, "blocked_pairs  {}", self.blocked_pairs)?;
        writeln!(f, "rel_err        {}", self.rel_err)
    }
}

pub fn cmd_compare(cfg: &Config) -> Result<CompareReport, CliError> {
    let (grid, built) = run_build(cfg)?;
    let predicted = predict_on(cfg, &grid)?;
    let stats = &built.file.stats;
    let cmp = compare(predicted.predicted, stats.total_transitions)?;
    let report = CompareReport {
        eta: predicted.eta,
        predicted: cmp.predicted,
        actual: cmp.actual,
        rel_err: cmp.rel_err,
        blocked_pairs: stats.blocked_pairs,
    };
    if let Some(path) = &cfg.output.csv_path {
        let header = format!("{},predicted,actual,rel_err", eta_header(report.eta.len()));
        let row = format!(
            "{},{},{},{}",
            eta_row(&report.eta),
            csv_num(report.predicted),
            report.actual,
            csv_num(report.rel_err)
        );
        append_csv(path, &header, &row)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyReport {
    pub report: CertificateReport,
}

impl fmt::Display for CertifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.report;
        if let Some(growth) = &r.growth {
            for (u, g) in growth.iter().enumerate() {
                writeln!(
                    f,
                    "input {u}: L irreducible {}, [[L, z+Lz+v], [1, 1]] irreducible {}",
                    g.l_irreducible, g.lzv_irreducible
                )?;
            }
        }
        for (k, t) in r.terms.iter().enumerate() {
            writeln!(
                f,
                "term {k}: A irreducible {}, [[A, p], [1, 1]] irreducible {}",
                t.a_irreducible, t.augmented_irreducible
            )?;
        }
        writeln!(f, "certificate    {}", r.certificate)?;
        match (r.witness, r.growth.is_some()) {
            (Some(w), true) => writeln!(f, "witness        input {w}"),
            (Some(w), false) => writeln!(f, "witness        term {w}"),
            (None, _) => writeln!(f, "witness        none"),
        }
    }
}

pub fn cmd_certify(cfg: &Config) -> Result<CertifyReport, CliError> {
    let report = if cfg.terms.is_some() {
        certify_objective(&cfg.objective()?)
    } else {
        let plant = cfg.plant()?;
        certify_growth_family(plant.growth(), &cfg.z()?).map_err(|e| CliError::Config(format!("model: {e}")))?
    };
    Ok(CertifyReport { report })
}
