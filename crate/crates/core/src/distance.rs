//! Transition distances `d(i, j) = -ln [exp(A)]_{ij}` over the adjacency
//! matrix of an operad graph.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::hypergraph::OperadGraph;

/// Exponential entries below this are treated as structural zeros.
pub const UNDERFLOW_THRESHOLD: f64 = 1e-300;

/// Default per-entry tolerance for the Taylor truncation.
pub const DEFAULT_EXPM_TOL: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistanceError {
    #[error("matrix is {rows}x{cols}, expected square")]
    Dimension { rows: usize, cols: usize },
    #[error("matrix entry ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
    #[error("vertex index {index} out of range for {n} vertices")]
    Index { index: usize, n: usize },
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `e^A` by scaling and squaring with a truncated Taylor series.
///
/// `A` is scaled by `2^-s` until its 1-norm is at most 1/2, the series is cut
/// once the next term's bound falls below `tol`, and the result is squared
/// `s` times.
pub fn matrix_exponential(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, DistanceError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(DistanceError::Dimension { rows, cols });
    }
    if !(tol > 0.0) {
        return Err(DistanceError::Tolerance(tol));
    }
    if let Some(k) = a.iter().position(|x| !x.is_finite()) {
        return Err(DistanceError::NonFinite(k % rows, k / rows));
    }
    let n = rows;
    let norm = one_norm(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a / 2f64.powi(squarings as i32);
    let theta = norm / 2f64.powi(squarings as i32);

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    // remainder after order m is bounded by theta^(m+1)/(m+1)! * 1/(1 - theta/(m+2))
    let mut bound = 1.0;
    let mut k = 1u32;
    loop {
        term = &term * &scaled / k as f64;
        result += &term;
        bound *= theta / (k + 1) as f64;
        if bound / (1.0 - theta / (k + 2) as f64) < tol || k >= 64 {
            break;
        }
        k += 1;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Cached `-ln e^A` for an operad graph, `+inf` where no walk exists.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    entries: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn from_exponential(exp_a: &DMatrix<f64>) -> Self {
        let entries = exp_a.map(|x| if x < UNDERFLOW_THRESHOLD { f64::INFINITY } else { 0.0 - x.ln() });
        DistanceMatrix { entries }
    }

    pub fn from_adjacency(a: &DMatrix<f64>, tol: f64) -> Result<Self, DistanceError> {
        Ok(Self::from_exponential(&matrix_exponential(a, tol)?))
    }

    pub fn for_graph(g: &OperadGraph, tol: f64) -> Result<Self, DistanceError> {
        let a = g.adjacency_matrix().map(|x| x as f64);
        Self::from_adjacency(&a, tol)
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Unchecked lookup for hot loops.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("from");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.len() {
                out.push(',');
                let d = self.entries[(i, j)];
                if d.is_infinite() {
                    out.push_str("inf");
                } else {
                    out.push_str(&format!("{d:.17e}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `d(v_i, v_j)`.
pub fn transition_distance(d: &DistanceMatrix, i: usize, j: usize) -> Result<f64, DistanceError> {
    let n = d.len();
    for index in [i, j] {
        if index >= n {
            return Err(DistanceError::Index { index, n });
        }
    }
    Ok(d.entries[(i, j)])
}
