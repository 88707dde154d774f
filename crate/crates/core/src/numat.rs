//! Dense matrix utilities for nonnegative and essentially nonnegative
//! matrices: exponential, irreducibility, augmentation and block-triangular
//! structure.
//!
//! Matrices are plain [`nalgebra::DMatrix<f64>`]. The state dimension of the
//! control systems handled here is small, so everything is dense and `O(n^3)`.

use nalgebra::DMatrix;
use thiserror::Error;

/// Dense real matrix.
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumatError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix must have at least one row")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry in input")]
    NonFinite,
    #[error("matrix is not essentially nonnegative (negative off-diagonal entry at ({row}, {col}))")]
    NotEssentiallyNonnegative { row: usize, col: usize },
    #[error("negative entry {index} in a vector that must be nonnegative")]
    NegativeVector { index: usize },
    #[error("matrix exponential overflowed")]
    Overflow,
}

pub(crate) fn check_square(m: &Matrix) -> Result<usize, NumatError> {
    if m.nrows() != m.ncols() {
        return Err(NumatError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(NumatError::Empty);
    }
    Ok(m.nrows())
}

fn check_finite(m: &Matrix) -> Result<(), NumatError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumatError::NonFinite)
    }
}

fn check_len(v: &[f64], n: usize) -> Result<(), NumatError> {
    if v.len() != n {
        return Err(NumatError::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    Ok(())
}

fn first_negative_off_diagonal(m: &Matrix) -> Option<(usize, usize)> {
    let n = m.nrows();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .find(|&(i, j)| i != j && m[(i, j)] < 0.0)
}

/// `true` iff every off-diagonal entry is `>= 0`.
pub fn is_essentially_nonnegative(m: &Matrix) -> Result<bool, NumatError> {
    check_square(m)?;
    Ok(first_negative_off_diagonal(m).is_none())
}

/// Adjacency lists of the digraph with an edge `i -> j` iff `m[(i, j)] > 0`.
/// Self-loops are dropped; they never matter for strong connectivity.
fn positive_digraph(m: &Matrix) -> Vec<Vec<usize>> {
    let n = m.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i && m[(i, j)] > 0.0).collect())
        .collect()
}

/// Tarjan's algorithm. Components are emitted sinks first, i.e. every edge
/// between two components goes from a later component to an earlier one.
fn strongly_connected_components(graph: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        graph: &'a [Vec<usize>],
        counter: usize,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        components: Vec<Vec<usize>>,
    }

    fn visit(v: usize, st: &mut State<'_>) {
        st.index[v] = Some(st.counter);
        st.low[v] = st.counter;
        st.counter += 1;
        st.stack.push(v);
        st.on_stack[v] = true;
        for k in 0..st.graph[v].len() {
            let w = st.graph[v][k];
            match st.index[w] {
                None => {
                    visit(w, st);
                    st.low[v] = st.low[v].min(st.low[w]);
                }
                Some(iw) if st.on_stack[w] => st.low[v] = st.low[v].min(iw),
                Some(_) => {}
            }
        }
        if Some(st.low[v]) == st.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().expect("tarjan stack underflow");
                st.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            comp.sort_unstable();
            st.components.push(comp);
        }
    }

    let n = graph.len();
    let mut st = State {
        graph,
        counter: 0,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::with_capacity(n),
        components: Vec::new(),
    };
    for v in 0..n {
        if st.index[v].is_none() {
            visit(v, &mut st);
        }
    }
    st.components
}

/// Irreducibility: the digraph of strictly positive entries is strongly
/// connected. A `1x1` matrix is irreducible iff its entry is positive.
pub fn is_irreducible(m: &Matrix) -> Result<bool, NumatError> {
    let n = check_square(m)?;
    if n == 1 {
        return Ok(m[(0, 0)] > 0.0);
    }
    Ok(strongly_connected_components(&positive_digraph(m)).len() == 1)
}

/// The `(n+1)x(n+1)` matrix `[[A, p], [1ᵀ, 1]]`.
pub fn augment_ap(a: &Matrix, p: &[f64]) -> Result<Matrix, NumatError> {
    let n = check_square(a)?;
    check_len(p, n)?;
    let mut out = Matrix::from_element(n + 1, n + 1, 1.0);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    for (i, &pi) in p.iter().enumerate() {
        out[(i, n)] = pi;
    }
    Ok(out)
}

/// The `(n+1)x(n+1)` matrix `[[L, z + Lz + v], [1ᵀ, 1]]` used by the
/// family uniqueness condition.
pub fn augment_lzv(l: &Matrix, z: &[f64], v: &[f64]) -> Result<Matrix, NumatError> {
    let n = check_square(l)?;
    check_len(z, n)?;
    check_len(v, n)?;
    if let Some((row, col)) = first_negative_off_diagonal(l) {
        return Err(NumatError::NotEssentiallyNonnegative { row, col });
    }
    for (index, &x) in z.iter().chain(v.iter()).enumerate() {
        if x < 0.0 {
            return Err(NumatError::NegativeVector { index: index % n });
        }
    }
    let zv = nalgebra::DVector::from_column_slice(z);
    let lz = l * &zv;
    let col: Vec<f64> = (0..n).map(|i| z[i] + lz[i] + v[i]).collect();
    augment_ap(l, &col)
}

fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Scaling and squaring with a truncated Taylor kernel.
///
/// The kernel always keeps at least `n` terms so that every entry reachable
/// by a path of length `< n` in the scaled matrix gets its (positive)
/// contribution; for nonnegative input this keeps the zero pattern of the
/// result exact.
fn exp_scaled_taylor(a: &Matrix) -> Result<Matrix, NumatError> {
    // Relative size of the last kept term; well below the 1e-12 target so
    // the squaring phase has headroom.
    const KERNEL_TOL: f64 = 1e-17;
    const MAX_TERMS: usize = 80;
    let n = a.nrows();
    let norm = norm1(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * 0.5f64.powi(squarings);

    let mut sum = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    for k in 1..=MAX_TERMS {
        term = &term * &scaled / k as f64;
        sum += &term;
        if k >= n && norm1(&term) <= KERNEL_TOL * norm1(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
        if !sum.iter().all(|x| x.is_finite()) {
            return Err(NumatError::Overflow);
        }
    }
    if !sum.iter().all(|x| x.is_finite()) {
        return Err(NumatError::Overflow);
    }
    Ok(sum)
}

/// `e^{M t}`.
///
/// Essentially nonnegative inputs are shifted to a nonnegative matrix first,
/// `e^{Mt} = e^{-ct} e^{(M + cI)t}`, so the series has no cancellation and
/// the result is entrywise nonnegative with the exact zero pattern. Inputs
/// where the shift would overflow use the unshifted kernel.
pub fn expm(m: &Matrix, t: f64) -> Result<Matrix, NumatError> {
    let n = check_square(m)?;
    check_finite(m)?;
    if !t.is_finite() {
        return Err(NumatError::NonFinite);
    }
    let a = m * t;
    if first_negative_off_diagonal(&a).is_none() {
        let shift = (0..n).map(|i| -a[(i, i)]).fold(0.0, f64::max);
        let shifted = &a + Matrix::identity(n, n) * shift;
        if norm1(&shifted) <= 600.0 {
            let e = exp_scaled_taylor(&shifted)?;
            return Ok(e * (-shift).exp());
        }
    }
    exp_scaled_taylor(&a)
}

/// `∫₀^τ e^{L s} ds`, read off the top-right block of the exponential of
/// `[[L, I], [0, 0]]` at time `τ`.
pub fn integral_expm(l: &Matrix, tau: f64) -> Result<Matrix, NumatError> {
    let n = check_square(l)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(NumatError::NonFinite);
    }
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(l);
    block
        .view_mut((0, n), (n, n))
        .copy_from(&Matrix::identity(n, n));
    let e = expm(&block, tau)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// Ordering of the strongly connected components of the positive-entry
/// digraph that makes the permuted matrix block lower-triangular.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTriangular {
    /// `permutation[k]` is the original index placed at position `k`.
    pub permutation: Vec<usize>,
    pub block_sizes: Vec<usize>,
}

impl BlockTriangular {
    /// `P M Pᵀ`, i.e. entry `(k, l)` is `m[(perm[k], perm[l])]`.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        let n = self.permutation.len();
        Matrix::from_fn(n, n, |k, l| m[(self.permutation[k], self.permutation[l])])
    }
}

pub fn block_triangular_form(m: &Matrix) -> Result<BlockTriangular, NumatError> {
    check_square(m)?;
    let components = strongly_connected_components(&positive_digraph(m));
    Ok(BlockTriangular {
        block_sizes: components.iter().map(Vec::len).collect(),
        permutation: components.into_iter().flatten().collect(),
    })
}
