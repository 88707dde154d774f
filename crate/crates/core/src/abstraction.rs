//! Abstractions on uniform grids.
//!
//! A grid covers the box `[lb, ub]` with `mᵢ` cells of width `ηᵢ` per axis;
//! cell `k` has center `lb + (k + ½)η`. For each cell and input, the center
//! is flowed over one sampling period with the nominal dynamics and the
//! growth bound inflates it to `[c − r', c + r']` with `r' = β(η/2 + z)`.
//! The successors are all cells whose closed `z`-enlarged box touches that
//! interval. They form an index box, so a pair is stored as per-axis ranges.
//!
//! Cells are numbered by a mixed-radix flat index with dimension 1 varying
//! fastest. A pair whose index box leaves the grid along a non-periodic
//! axis is blocked: it has no transitions and counts as an overflow pair.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::growth::{GrowthBound, GrowthError, PredictorTerm};
use crate::predictor::{GridParameter, PredictorError};

/// Relative slack (in cell widths) for boundary contacts and tiling.
const SNAP: f64 = 1e-9;
const CELLS_PER_CHUNK: u64 = 1024;

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("axis {axis}: need lb < ub, got [{lb}, {ub}]")]
    InvalidBounds { axis: usize, lb: f64, ub: f64 },
    #[error("axis {axis}: eta = {eta} does not tile a domain of length {length}")]
    NotTiling { axis: usize, eta: f64, length: f64 },
    #[error("axis {axis}: subdivision count must be positive")]
    NoSubdivisions { axis: usize },
    #[error("cell index {index:?} out of range for counts {counts:?}")]
    CellOutOfRange { index: Vec<usize>, counts: Vec<usize> },
    #[error("input index {index} out of range ({count} inputs)")]
    InputOutOfRange { index: usize, count: usize },
    #[error("plant needs at least one input")]
    NoInputs,
    #[error("substeps must be at least 1")]
    InvalidSubsteps,
    #[error("non-finite state during integration{}", context(*.cell, *.input))]
    BlowUp {
        cell: Option<u64>,
        input: Option<usize>,
    },
    #[error("writing transitions{}: {source}", context(Some(*.cell), Some(*.input)))]
    Sink {
        cell: u64,
        input: usize,
        #[source]
        source: io::Error,
    },
    #[error("actual transition count is zero; relative error undefined")]
    Incomparable,
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

fn context(cell: Option<u64>, input: Option<usize>) -> String {
    match (cell, input) {
        (Some(c), Some(u)) => format!(" at cell {c}, input {u}"),
        (Some(c), None) => format!(" at cell {c}"),
        (None, Some(u)) => format!(" for input {u}"),
        (None, None) => String::new(),
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), AbstractionError> {
    if expected != found {
        return Err(AbstractionError::Dimension {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    lb: Vec<f64>,
    ub: Vec<f64>,
    eta: GridParameter,
    counts: Vec<usize>,
    periodic: Vec<bool>,
}

impl UniformGrid {
    /// Grid with edge lengths `eta`, which must tile every axis.
    pub fn new(
        lb: Vec<f64>,
        ub: Vec<f64>,
        eta: GridParameter,
        periodic: Vec<bool>,
    ) -> Result<Self, AbstractionError> {
        let n = eta.dim();
        check_len("lb", n, lb.len())?;
        check_len("ub", n, ub.len())?;
        check_len("periodic", n, periodic.len())?;
        let mut counts = Vec::with_capacity(n);
        for axis in 0..n {
            let (l, u) = (lb[axis], ub[axis]);
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(AbstractionError::InvalidBounds { axis, lb: l, ub: u });
            }
            let length = u - l;
            let m = (length / eta[axis]).round();
            if m < 1.0 || (m * eta[axis] - length).abs() > SNAP * length || m > u32::MAX as f64 {
                return Err(AbstractionError::NotTiling {
                    axis,
                    eta: eta[axis],
                    length,
                });
            }
            counts.push(m as usize);
        }
        Ok(Self {
            lb,
            ub,
            eta,
            counts,
            periodic,
        })
    }

    /// Grid with `counts[i]` cells along axis `i`.
    pub fn from_subdivisions(
        lb: Vec<f64>,
        ub: Vec<f64>,
        counts: &[usize],
        periodic: Vec<bool>,
    ) -> Result<Self, AbstractionError> {
        check_len("lb", counts.len(), lb.len())?;
        check_len("ub", counts.len(), ub.len())?;
        if let Some(axis) = counts.iter().position(|&m| m == 0) {
            return Err(AbstractionError::NoSubdivisions { axis });
        }
        for axis in 0..counts.len() {
            if !(lb[axis].is_finite() && ub[axis].is_finite() && lb[axis] < ub[axis]) {
                return Err(AbstractionError::InvalidBounds {
                    axis,
                    lb: lb[axis],
                    ub: ub[axis],
                });
            }
        }
        let eta = GridParameter::new(
            counts
                .iter()
                .enumerate()
                .map(|(i, &m)| (ub[i] - lb[i]) / m as f64)
                .collect(),
        )?;
        Self::new(lb, ub, eta, periodic)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn lb(&self) -> &[f64] {
        &self.lb
    }

    pub fn ub(&self) -> &[f64] {
        &self.ub
    }

    pub fn eta(&self) -> &GridParameter {
        &self.eta
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn num_cells(&self) -> u64 {
        self.counts.iter().map(|&m| m as u64).product()
    }

    pub fn cell(&self, k: Vec<usize>) -> Result<CellIndex, AbstractionError> {
        if k.len() != self.dim() || k.iter().zip(&self.counts).any(|(a, m)| a >= m) {
            return Err(AbstractionError::CellOutOfRange {
                index: k,
                counts: self.counts.clone(),
            });
        }
        Ok(CellIndex(k))
    }

    pub fn flat_index(&self, cell: &CellIndex) -> u64 {
        cell.0
            .iter()
            .zip(&self.counts)
            .rev()
            .fold(0u64, |acc, (&k, &m)| acc * m as u64 + k as u64)
    }

    pub fn cell_from_flat(&self, mut flat: u64) -> Result<CellIndex, AbstractionError> {
        let mut k = Vec::with_capacity(self.dim());
        for &m in &self.counts {
            k.push((flat % m as u64) as usize);
            flat /= m as u64;
        }
        if flat != 0 {
            return Err(AbstractionError::CellOutOfRange {
                index: k,
                counts: self.counts.clone(),
            });
        }
        Ok(CellIndex(k))
    }

    pub fn center(&self, cell: &CellIndex) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.lb[i] + (cell.0[i] as f64 + 0.5) * self.eta[i])
            .collect()
    }

    /// Cell containing `x`, wrapping periodic axes. Points on a shared face
    /// go to the upper cell, except on `ub` itself.
    pub fn cell_of_point(&self, x: &[f64]) -> Option<CellIndex> {
        if x.len() != self.dim() {
            return None;
        }
        let mut k = Vec::with_capacity(self.dim());
        for (i, &xi) in x.iter().enumerate() {
            let m = self.counts[i] as i64;
            let s = ((xi - self.lb[i]) / self.eta[i]).floor();
            if !s.is_finite() {
                return None;
            }
            let s = s as i64;
            if self.periodic[i] {
                k.push(s.rem_euclid(m) as usize);
            } else if (0..m).contains(&s) {
                k.push(s as usize);
            } else if s == m && x[i] <= self.ub[i] {
                k.push((m - 1) as usize);
            } else {
                return None;
            }
        }
        Some(CellIndex(k))
    }
}

/// Multi-index of a cell, `0 <= kᵢ < mᵢ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellIndex(Vec<usize>);

impl CellIndex {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Per-axis inclusive index ranges of the successor cells. On a periodic
/// axis a range may wrap, in which case `lo > hi` and the bit for that axis
/// is set in `wrapped_mask`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub width: Vec<usize>,
    pub wrapped_mask: u64,
}

impl IndexBox {
    pub fn contains(&self, k: &[usize]) -> bool {
        k.iter().enumerate().all(|(i, &ki)| {
            if self.wrapped_mask >> i & 1 == 1 {
                ki >= self.lo[i] || ki <= self.hi[i]
            } else {
                self.lo[i] <= ki && ki <= self.hi[i]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SuccessorBox {
    Inside(IndexBox),
    /// The reachable set leaves the domain; the pair is blocked.
    Overflow,
}

impl SuccessorBox {
    pub fn is_overflow(&self) -> bool {
        matches!(self, SuccessorBox::Overflow)
    }
}

/// Nominal vector field `f(x, u)`, written into `dx`.
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
}

impl<F> VectorField for F
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self(x, u, dx)
    }
}

#[derive(Clone)]
pub struct Plant {
    name: String,
    n: usize,
    inputs: Vec<Vec<f64>>,
    rhs: Arc<dyn VectorField>,
    growth: Vec<GrowthBound>,
    w: Vec<f64>,
    tau: f64,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("inputs", &self.inputs)
            .field("w", &self.w)
            .field("tau", &self.tau)
            .finish_non_exhaustive()
    }
}

impl Plant {
    /// All growth bounds must share the sampling time and dimension.
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        rhs: Arc<dyn VectorField>,
        growth: Vec<GrowthBound>,
        w: Vec<f64>,
    ) -> Result<Self, AbstractionError> {
        let first = growth.first().ok_or(AbstractionError::NoInputs)?;
        let (n, tau) = (first.dim(), first.tau());
        check_len("growth bounds", inputs.len(), growth.len())?;
        for gb in &growth {
            check_len("growth bound", n, gb.dim())?;
            if gb.tau() != tau {
                return Err(GrowthError::InvalidTau(gb.tau()).into());
            }
        }
        crate::growth::check_nonnegative("w", &w, n)?;
        Ok(Self {
            name: name.into(),
            n,
            inputs,
            rhs,
            growth,
            w,
            tau,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn growth(&self) -> &[GrowthBound] {
        &self.growth
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rhs(&self) -> &dyn VectorField {
        self.rhs.as_ref()
    }

    /// Predictor terms of all inputs for measurement error `z`.
    pub fn predictor_terms(&self, z: &[f64]) -> Result<Vec<PredictorTerm>, GrowthError> {
        self.growth.iter().map(|gb| gb.to_predictor_term(z)).collect()
    }
}

/// 5 for `τ <= 0.05`, otherwise `⌈τ / 0.01⌉`.
pub fn default_substeps(tau: f64) -> usize {
    if tau <= 0.05 {
        5
    } else {
        (tau / 0.01).ceil() as usize
    }
}

/// Classical RK4 over `[0, τ]` with `substeps` equal steps.
pub fn integrate(
    plant: &Plant,
    x0: &[f64],
    u: &[f64],
    tau: f64,
    substeps: usize,
) -> Result<Vec<f64>, AbstractionError> {
    let n = plant.dim();
    check_len("state", n, x0.len())?;
    if substeps == 0 {
        return Err(AbstractionError::InvalidSubsteps);
    }
    let h = tau / substeps as f64;
    let f = plant.rhs();
    let mut x = x0.to_vec();
    let mut tmp = vec![0.0; n];
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for _ in 0..substeps {
        f.eval(&x, u, &mut k[0]);
        for (stage, scale) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..n {
                tmp[i] = x[i] + scale * h * k[stage - 1][i];
            }
            let (_, rest) = k.split_at_mut(stage);
            f.eval(&tmp, u, &mut rest[0]);
        }
        for i in 0..n {
            x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AbstractionError::BlowUp {
                cell: None,
                input: None,
            });
        }
    }
    Ok(x)
}

/// Index box of the cells whose closed `z`-enlarged boxes meet
/// `[c − r', c + r']`, given `reach = r' + z`.
pub fn index_box(grid: &UniformGrid, c: &[f64], reach: &[f64]) -> SuccessorBox {
    let n = grid.dim();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    let mut width = Vec::with_capacity(n);
    let mut wrapped_mask = 0u64;
    for i in 0..n {
        let eta = grid.eta[i];
        let m = grid.counts[i] as i64;
        let s = (c[i] - grid.lb[i]) / eta;
        let rho = reach[i] / eta;
        let (a, b) = ((s - rho - 1.0 - SNAP).ceil(), (s + rho + SNAP).floor());
        if !(a.is_finite() && b.is_finite()) {
            return SuccessorBox::Overflow;
        }
        let (a, b) = (a as i64, b as i64);
        if grid.periodic[i] {
            let w = b - a + 1;
            if w >= m {
                lo.push(0);
                hi.push((m - 1) as usize);
                width.push(m as usize);
            } else {
                let (l, h) = (a.rem_euclid(m) as usize, b.rem_euclid(m) as usize);
                if l > h {
                    wrapped_mask |= 1 << i;
                }
                lo.push(l);
                hi.push(h);
                width.push(w as usize);
            }
        } else {
            if a < 0 || b >= m {
                return SuccessorBox::Overflow;
            }
            lo.push(a as usize);
            hi.push(b as usize);
            width.push((b - a + 1) as usize);
        }
    }
    SuccessorBox::Inside(IndexBox {
        lo,
        hi,
        width,
        wrapped_mask,
    })
}

/// `r' + z` per input, with `r' = β(η/2 + z)`.
fn reaches(grid: &UniformGrid, plant: &Plant, z: &[f64]) -> Result<Vec<Vec<f64>>, AbstractionError> {
    check_len("plant", grid.dim(), plant.dim())?;
    crate::growth::check_nonnegative("z", z, grid.dim())?;
    let r0: Vec<f64> = grid.eta.iter().zip(z).map(|(e, z)| e / 2.0 + z).collect();
    plant
        .growth
        .iter()
        .map(|gb| {
            let r = gb.eval(&r0)?;
            Ok(r.iter().zip(z).map(|(r, z)| r + z).collect())
        })
        .collect()
}

fn successor_with_reach(
    grid: &UniformGrid,
    plant: &Plant,
    reach: &[f64],
    cell: &CellIndex,
    flat: u64,
    u_index: usize,
    substeps: usize,
) -> Result<SuccessorBox, AbstractionError> {
    let c = integrate(
        plant,
        &grid.center(cell),
        &plant.inputs[u_index],
        plant.tau,
        substeps,
    )
    .map_err(|e| match e {
        AbstractionError::BlowUp { .. } => AbstractionError::BlowUp {
            cell: Some(flat),
            input: Some(u_index),
        },
        other => other,
    })?;
    Ok(index_box(grid, &c, reach))
}

pub fn successors(
    grid: &UniformGrid,
    plant: &Plant,
    z: &[f64],
    cell: &CellIndex,
    u_index: usize,
    substeps: usize,
) -> Result<SuccessorBox, AbstractionError> {
    if u_index >= plant.inputs.len() {
        return Err(AbstractionError::InputOutOfRange {
            index: u_index,
            count: plant.inputs.len(),
        });
    }
    let reach = reaches(grid, plant, z)?;
    let flat = grid.flat_index(cell);
    successor_with_reach(grid, plant, &reach[u_index], cell, flat, u_index, substeps)
}

/// Number of successor cells; zero for a blocked pair.
pub fn count_transitions(b: &SuccessorBox) -> u64 {
    match b {
        SuccessorBox::Overflow => 0,
        SuccessorBox::Inside(ib) => ib.width.iter().map(|&w| w as u64).product(),
    }
}

/// Receives every `(cell, input)` pair of a build in flat-index order.
pub trait TransitionSink {
    fn begin(&mut self, _grid: &UniformGrid, _num_inputs: usize) -> io::Result<()> {
        Ok(())
    }
    fn record(&mut self, cell: u64, input: usize, b: &SuccessorBox) -> io::Result<()>;
    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Text transition file: a header line
/// `gridabs-trans v1 n=<n> m=<m1,...> inputs=<count>`, then one record
/// `cell,input,lo_1..lo_n,hi_1..hi_n,wrapped_mask` per non-blocked pair.
pub struct TransitionWriter<W: Write> {
    out: W,
    bytes: u64,
}

impl<W: Write> TransitionWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, bytes: 0 }
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn put(&mut self, line: &str) -> io::Result<()> {
        self.out.write_all(line.as_bytes())?;
        self.bytes += line.len() as u64;
        Ok(())
    }
}

impl<W: Write> TransitionSink for TransitionWriter<W> {
    fn begin(&mut self, grid: &UniformGrid, num_inputs: usize) -> io::Result<()> {
        let m: Vec<String> = grid.counts.iter().map(|m| m.to_string()).collect();
        let header = format!(
            "gridabs-trans v1 n={} m={} inputs={}\n",
            grid.dim(),
            m.join(","),
            num_inputs
        );
        self.put(&header)
    }

    fn record(&mut self, cell: u64, input: usize, b: &SuccessorBox) -> io::Result<()> {
        let SuccessorBox::Inside(ib) = b else {
            return Ok(());
        };
        let mut line = format!("{cell},{input}");
        for v in ib.lo.iter().chain(&ib.hi) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push_str(&format!(",{}\n", ib.wrapped_mask));
        self.put(&line)
    }

    fn finish(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstractionStats {
    pub num_cells: u64,
    pub num_inputs: usize,
    pub total_transitions: u64,
    /// Pairs whose successor box leaves the domain.
    pub blocked_pairs: u64,
    pub per_input_transitions: Vec<u64>,
    pub per_input_blocked: Vec<u64>,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Builds the abstraction over all `(cell, input)` pairs.
///
/// Cells are processed in parallel on the current rayon pool; results are
/// consumed in flat-index order so the sink sees the same stream for any
/// number of threads.
pub fn build(
    grid: &UniformGrid,
    plant: &Plant,
    z: &[f64],
    substeps: usize,
    mut sink: Option<&mut dyn TransitionSink>,
) -> Result<AbstractionStats, AbstractionError> {
    let start = Instant::now();
    if substeps == 0 {
        return Err(AbstractionError::InvalidSubsteps);
    }
    let reach = reaches(grid, plant, z)?;
    let num_inputs = plant.inputs.len();
    let num_cells = grid.num_cells();
    if let Some(s) = sink.as_deref_mut() {
        s.begin(grid, num_inputs).map_err(|source| AbstractionError::Sink {
            cell: 0,
            input: 0,
            source,
        })?;
    }

    let mut stats = AbstractionStats {
        num_cells,
        num_inputs,
        total_transitions: 0,
        blocked_pairs: 0,
        per_input_transitions: vec![0; num_inputs],
        per_input_blocked: vec![0; num_inputs],
        wall_time: Duration::ZERO,
    };
    let chunks = num_cells.div_ceil(CELLS_PER_CHUNK);
    let window = (rayon::current_num_threads() as u64 * 4).max(1);
    let mut next = 0u64;
    while next < chunks {
        let end = (next + window).min(chunks);
        let batch: Vec<Result<Vec<SuccessorBox>, AbstractionError>> = (next..end)
            .into_par_iter()
            .map(|chunk| {
                let first = chunk * CELLS_PER_CHUNK;
                let last = (first + CELLS_PER_CHUNK).min(num_cells);
                let mut out = Vec::with_capacity(((last - first) as usize) * num_inputs);
                for flat in first..last {
                    let cell = grid.cell_from_flat(flat)?;
                    for (u, r) in reach.iter().enumerate() {
                        out.push(successor_with_reach(grid, plant, r, &cell, flat, u, substeps)?);
                    }
                }
                Ok(out)
            })
            .collect();
        for (offset, boxes) in batch.into_iter().enumerate() {
            let first = (next + offset as u64) * CELLS_PER_CHUNK;
            for (k, b) in boxes?.iter().enumerate() {
                let flat = first + (k / num_inputs) as u64;
                let u = k % num_inputs;
                match b {
                    SuccessorBox::Overflow => {
                        stats.blocked_pairs += 1;
                        stats.per_input_blocked[u] += 1;
                    }
                    inside => {
                        let t = count_transitions(inside);
                        stats.total_transitions += t;
                        stats.per_input_transitions[u] += t;
                    }
                }
                if let Some(s) = sink.as_deref_mut() {
                    s.record(flat, u, b).map_err(|source| AbstractionError::Sink {
                        cell: flat,
                        input: u,
                        source,
                    })?;
                }
            }
        }
        next = end;
    }
    if let Some(s) = sink {
        s.finish().map_err(|source| AbstractionError::Sink {
            cell: num_cells,
            input: 0,
            source,
        })?;
    }
    stats.wall_time = start.elapsed();
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub predicted: f64,
    pub actual: u64,
    pub rel_err: f64,
}

pub fn compare(predicted: f64, actual: u64) -> Result<ComparisonReport, AbstractionError> {
    if actual == 0 {
        return Err(AbstractionError::Incomparable);
    }
    Ok(ComparisonReport {
        predicted,
        actual,
        rel_err: (predicted - actual as f64).abs() / actual as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numat::Matrix;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn still_plant(n: usize, v: Vec<f64>) -> Plant {
        let gb = GrowthBound::new(Matrix::zeros(n, n), v, 1.0).unwrap();
        let rhs: Arc<dyn VectorField> = Arc::new(|_: &[f64], _: &[f64], dx: &mut [f64]| dx.fill(0.0));
        Plant::new("still", vec![vec![0.0]], rhs, vec![gb], vec![0.0; n]).unwrap()
    }

    fn drift_plant(n: usize, l: Matrix, v: Vec<f64>, tau: f64, speed: Vec<f64>) -> Plant {
        let gb = GrowthBound::new(l, v, tau).unwrap();
        let rhs: Arc<dyn VectorField> = Arc::new(move |_: &[f64], _: &[f64], dx: &mut [f64]| {
            dx.copy_from_slice(&speed)
        });
        Plant::new("drift", vec![vec![0.0]], rhs, vec![gb], vec![0.0; n]).unwrap()
    }

    fn line_grid(m: usize) -> UniformGrid {
        UniformGrid::from_subdivisions(vec![0.0], vec![m as f64], &[m], vec![false]).unwrap()
    }

    #[test]
    fn grid_rejects_non_tiling_eta() {
        let eta = GridParameter::new(vec![0.3]).unwrap();
        assert!(matches!(
            UniformGrid::new(vec![0.0], vec![1.0], eta, vec![false]),
            Err(AbstractionError::NotTiling { .. })
        ));
        let eta = GridParameter::new(vec![0.25]).unwrap();
        let g = UniformGrid::new(vec![0.0], vec![1.0], eta, vec![false]).unwrap();
        assert_eq!(g.counts(), &[4]);
    }

    #[test]
    fn flat_index_dimension_one_fastest() {
        let g = UniformGrid::from_subdivisions(vec![0.0; 3], vec![1.0; 3], &[3, 4, 5], vec![false; 3])
            .unwrap();
        let c = g.cell(vec![2, 1, 3]).unwrap();
        assert_eq!(g.flat_index(&c), 2 + 3 * (1 + 4 * 3));
        for flat in 0..g.num_cells() {
            assert_eq!(g.flat_index(&g.cell_from_flat(flat).unwrap()), flat);
        }
        assert!(g.cell_from_flat(60).is_err());
    }

    #[test]
    fn integrate_examples() {
        let p = still_plant(2, vec![0.0, 0.0]);
        assert_eq!(integrate(&p, &[1.0, -2.0], &[0.0], 0.3, 7).unwrap(), vec![1.0, -2.0]);

        let gb = GrowthBound::new(Matrix::zeros(1, 1), vec![0.0], 0.25).unwrap();
        let rhs: Arc<dyn VectorField> = Arc::new(|_: &[f64], u: &[f64], dx: &mut [f64]| dx[0] = u[0]);
        let p = Plant::new("u", vec![vec![0.5]], rhs, vec![gb], vec![0.0]).unwrap();
        assert_eq!(integrate(&p, &[1.0], &[0.5], 0.25, 4).unwrap(), vec![1.125]);

        let gb = GrowthBound::new(Matrix::from_element(1, 1, 1.0), vec![0.0], 0.01).unwrap();
        let rhs: Arc<dyn VectorField> = Arc::new(|x: &[f64], _: &[f64], dx: &mut [f64]| dx[0] = x[0]);
        let p = Plant::new("exp", vec![vec![0.0]], rhs, vec![gb], vec![0.0]).unwrap();
        let x = integrate(&p, &[1.0], &[0.0], 0.01, 5).unwrap();
        assert_relative_eq!(x[0], 0.01f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn integrate_reports_blow_up() {
        let gb = GrowthBound::new(Matrix::zeros(1, 1), vec![0.0], 1.0).unwrap();
        let rhs: Arc<dyn VectorField> =
            Arc::new(|x: &[f64], _: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0]);
        let p = Plant::new("sq", vec![vec![0.0]], rhs, vec![gb], vec![0.0]).unwrap();
        assert!(matches!(
            integrate(&p, &[1e200], &[0.0], 1.0, 10),
            Err(AbstractionError::BlowUp { .. })
        ));
    }

    #[test]
    fn still_interior_cell_has_width_three() {
        let g = line_grid(10);
        let p = still_plant(1, vec![0.0]);
        let c = g.cell(vec![4]).unwrap();
        let b = successors(&g, &p, &[0.0], &c, 0, 1).unwrap();
        let SuccessorBox::Inside(ib) = b else { panic!() };
        assert_eq!((ib.lo[0], ib.hi[0], ib.width[0]), (3, 5, 3));

        let p = still_plant(1, vec![0.25]);
        let b = successors(&g, &p, &[0.0], &c, 0, 1).unwrap();
        assert_eq!(count_transitions(&b), 3);
    }

    #[test]
    fn outward_flow_at_edge_overflows() {
        let g = line_grid(10);
        let p = drift_plant(1, Matrix::zeros(1, 1), vec![0.0], 1.0, vec![0.6]);
        let c = g.cell(vec![9]).unwrap();
        assert!(successors(&g, &p, &[0.0], &c, 0, 1).unwrap().is_overflow());
    }

    #[test]
    fn still_line_totals() {
        let g = line_grid(10);
        let p = still_plant(1, vec![0.0]);
        let stats = build(&g, &p, &[0.0], 1, None).unwrap();
        assert_eq!(stats.total_transitions, 24);
        assert_eq!(stats.blocked_pairs, 2);
        assert_eq!(stats.per_input_transitions, vec![24]);
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_transitions(&SuccessorBox::Overflow), 0);
        let b = SuccessorBox::Inside(IndexBox {
            lo: vec![0, 0],
            hi: vec![2, 1],
            width: vec![3, 2],
            wrapped_mask: 0,
        });
        assert_eq!(count_transitions(&b), 6);
    }

    #[test]
    fn periodic_full_ring() {
        let g = UniformGrid::from_subdivisions(vec![0.0], vec![4.0], &[4], vec![true]).unwrap();
        let b = index_box(&g, &[0.5], &[3.0]);
        let SuccessorBox::Inside(ib) = b else { panic!() };
        assert_eq!((ib.lo[0], ib.hi[0], ib.width[0], ib.wrapped_mask), (0, 3, 4, 0));
        let b = index_box(&g, &[0.5], &[0.5]);
        let SuccessorBox::Inside(ib) = b else { panic!() };
        assert_eq!((ib.lo[0], ib.hi[0], ib.width[0], ib.wrapped_mask), (3, 1, 3, 1));
        assert!(ib.contains(&[0]) && ib.contains(&[3]) && !ib.contains(&[2]));
    }

    #[test]
    fn periodic_shift_maps_to_same_cell_and_box() {
        let g = UniformGrid::from_subdivisions(
            vec![-1.0, 0.0],
            vec![1.0, 2.0 * std::f64::consts::PI],
            &[6, 8],
            vec![false, true],
        )
        .unwrap();
        let period = 2.0 * std::f64::consts::PI;
        let reach = [0.2, 0.5];
        for cell in [vec![2, 0], vec![3, 7], vec![1, 4]] {
            let c = g.center(&g.cell(cell.clone()).unwrap());
            for k in [-2.0, 1.0, 3.0] {
                let shifted = [c[0], c[1] + k * period];
                assert_eq!(g.cell_of_point(&shifted).unwrap().as_slice(), &cell[..]);
                assert_eq!(index_box(&g, &shifted, &reach), index_box(&g, &c, &reach));
            }
        }
    }

    #[test]
    fn cell_of_point_edges() {
        let g = line_grid(10);
        assert_eq!(g.cell_of_point(&[10.0]).unwrap().as_slice(), &[9]);
        assert_eq!(g.cell_of_point(&[0.0]).unwrap().as_slice(), &[0]);
        assert!(g.cell_of_point(&[10.5]).is_none());
        assert!(g.cell_of_point(&[-0.1]).is_none());
    }

    /// Scan over all integer offsets with the closed intersection test.
    fn oracle(g: &UniformGrid, c: &[f64], r: &[f64], z: &[f64]) -> SuccessorBox {
        let n = g.dim();
        let mut lo = vec![];
        let mut hi = vec![];
        let mut width = vec![];
        let mut mask = 0;
        for i in 0..n {
            let m = g.counts()[i] as i64;
            let eta = g.eta()[i];
            let hits: Vec<i64> = (-3 * m - 20..4 * m + 20)
                .filter(|&k| {
                    let center = g.lb()[i] + (k as f64 + 0.5) * eta;
                    let half = eta / 2.0 + z[i];
                    c[i] - r[i] <= center + half && center - half <= c[i] + r[i]
                })
                .collect();
            let (a, b) = (*hits.first().unwrap(), *hits.last().unwrap());
            if g.periodic()[i] {
                let ring: std::collections::BTreeSet<i64> = hits.iter().map(|k| k.rem_euclid(m)).collect();
                if ring.len() as i64 == m {
                    lo.push(0);
                    hi.push(m as usize - 1);
                    width.push(m as usize);
                } else {
                    let (l, h) = (a.rem_euclid(m) as usize, b.rem_euclid(m) as usize);
                    if l > h {
                        mask |= 1 << i;
                    }
                    lo.push(l);
                    hi.push(h);
                    width.push(hits.len());
                }
            } else {
                if a < 0 || b >= m {
                    return SuccessorBox::Overflow;
                }
                lo.push(a as usize);
                hi.push(b as usize);
                width.push(hits.len());
            }
        }
        SuccessorBox::Inside(IndexBox {
            lo,
            hi,
            width,
            wrapped_mask: mask,
        })
    }

    #[test]
    fn successor_boxes_match_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..400 {
            let n = rng.random_range(1..=2);
            let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=12)).collect();
            let lb: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..1.0)).collect();
            let ub: Vec<f64> = lb.iter().map(|l| l + rng.random_range(0.5..4.0)).collect();
            let periodic: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let g = UniformGrid::from_subdivisions(lb, ub, &counts, periodic).unwrap();
            let l = Matrix::from_fn(n, n, |i, j| {
                if i == j {
                    rng.random_range(-1.0..1.0)
                } else {
                    rng.random_range(0.0..0.5)
                }
            });
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.3)).collect();
            let speed: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.1)).collect();
            let tau = rng.random_range(0.05..0.5);
            let p = drift_plant(n, l, v, tau, speed);
            let r0: Vec<f64> = g.eta().iter().zip(&z).map(|(e, z)| e / 2.0 + z).collect();
            let r = p.growth()[0].eval(&r0).unwrap();
            for flat in 0..g.num_cells() {
                let cell = g.cell_from_flat(flat).unwrap();
                let got = successors(&g, &p, &z, &cell, 0, 3).unwrap();
                let c = integrate(&p, &g.center(&cell), &[0.0], tau, 3).unwrap();
                assert_eq!(got, oracle(&g, &c, &r, &z), "cell {flat}");
            }
        }
    }

    #[test]
    fn enlarging_z_never_shrinks_boxes() {
        let g = UniformGrid::from_subdivisions(vec![-1.0, -1.0], vec![1.0, 1.0], &[9, 7], vec![false; 2])
            .unwrap();
        let l = Matrix::from_row_slice(2, 2, &[-0.5, 0.3, 0.2, -0.1]);
        let p = drift_plant(2, l, vec![0.01, 0.02], 0.2, vec![0.3, -0.2]);
        for flat in 0..g.num_cells() {
            let cell = g.cell_from_flat(flat).unwrap();
            let small = successors(&g, &p, &[0.0, 0.01], &cell, 0, 2).unwrap();
            let large = successors(&g, &p, &[0.03, 0.02], &cell, 0, 2).unwrap();
            match (small, large) {
                (_, SuccessorBox::Overflow) => {}
                (SuccessorBox::Overflow, SuccessorBox::Inside(_)) => panic!("box shrank"),
                (SuccessorBox::Inside(a), SuccessorBox::Inside(b)) => {
                    for i in 0..2 {
                        assert!(b.lo[i] <= a.lo[i] && a.hi[i] <= b.hi[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn still_interior_boxes_are_centered() {
        let g = UniformGrid::from_subdivisions(vec![-0.3, 1.7], vec![2.9, 4.1], &[16, 12], vec![false; 2])
            .unwrap();
        let p = still_plant(2, vec![0.013, 0.4]);
        for flat in 0..g.num_cells() {
            let cell = g.cell_from_flat(flat).unwrap();
            if let SuccessorBox::Inside(b) = successors(&g, &p, &[0.0, 0.02], &cell, 0, 1).unwrap() {
                for i in 0..2 {
                    let k = cell.as_slice()[i];
                    assert_eq!(k - b.lo[i], b.hi[i] - k);
                }
            }
        }
    }

    struct Collect(Vec<(u64, usize, SuccessorBox)>);

    impl TransitionSink for Collect {
        fn record(&mut self, cell: u64, input: usize, b: &SuccessorBox) -> io::Result<()> {
            self.0.push((cell, input, b.clone()));
            Ok(())
        }
    }

    #[test]
    fn build_total_is_sum_of_pairs_in_flat_order() {
        let g = UniformGrid::from_subdivisions(vec![-1.0, -1.0], vec![1.0, 1.0], &[40, 33], vec![false; 2])
            .unwrap();
        let l = Matrix::from_row_slice(2, 2, &[-0.5, 0.3, 0.2, -0.1]);
        let p = drift_plant(2, l, vec![0.01, 0.02], 0.2, vec![0.3, -0.2]);
        let mut sink = Collect(vec![]);
        let stats = build(&g, &p, &[0.0, 0.0], 2, Some(&mut sink)).unwrap();
        assert_eq!(sink.0.len() as u64, g.num_cells());
        let mut total = 0;
        for (k, (flat, u, b)) in sink.0.iter().enumerate() {
            assert_eq!((*flat, *u), (k as u64, 0));
            let cell = g.cell_from_flat(*flat).unwrap();
            let direct = successors(&g, &p, &[0.0, 0.0], &cell, 0, 2).unwrap();
            assert_eq!(&direct, b);
            total += count_transitions(&direct);
        }
        assert_eq!(stats.total_transitions, total);
        assert!(stats.blocked_pairs > 0);
    }

    #[test]
    fn writer_format() {
        let g = line_grid(4);
        let p = still_plant(1, vec![0.0]);
        let mut w = TransitionWriter::new(Vec::new());
        build(&g, &p, &[0.0], 1, Some(&mut w)).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text, "gridabs-trans v1 n=1 m=4 inputs=1\n1,0,0,2,0\n2,0,1,3,0\n");
    }

    #[test]
    fn compare_examples() {
        let r = compare(54.6, 55).unwrap();
        assert_relative_eq!(r.rel_err, 0.4 / 55.0, max_relative = 1e-12);
        assert_relative_eq!(compare(54.6e9, 55_700_000_000).unwrap().rel_err, 1.1 / 55.7, max_relative = 1e-9);
        assert_eq!(compare(7.0, 7).unwrap().rel_err, 0.0);
        assert!(matches!(compare(1.0, 0), Err(AbstractionError::Incomparable)));
    }

    #[test]
    fn default_substeps_rule() {
        assert_eq!(default_substeps(0.01), 5);
        assert_eq!(default_substeps(0.05), 5);
        assert_eq!(default_substeps(0.2), 20);
        assert_eq!(default_substeps(0.055), 6);
    }
}
