//! Finite-`n` Markov chain of the hub's redundancy constant, `alpha = 1`.
//!
//! States `0` and `1` mean "k = 1, heard zero resp. one broadcast last
//! interval"; state `m >= 2` means `k = m`. From state `m` the hub is
//! overtaken by the `j`-th leaf (`j < max(m, 1)`) with probability
//! `1/(n+1)` each, landing in state `j`; otherwise it is suppressed after
//! hearing all `n` leaves and lands in state `n`.

use serde::Serialize;

use super::AnalysisError;
use crate::num::{compensated_sum, Real};

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        DenseMatrix { dim, data: vec![T::zero(); dim * dim] }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, AnalysisError> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(AnalysisError::NotSquare {
                rows: dim,
                cols: rows.first().map_or(0, Vec::len),
            });
        }
        Ok(DenseMatrix { dim, data: rows.into_iter().flatten().collect() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.dim + col] = v;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// `v * M` for a row vector `v`.
    pub fn left_multiply(&self, v: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|col| compensated_sum((0..self.dim).map(|row| v[row] * self.get(row, col))))
            .collect()
    }
}

/// The hub chain's transition matrix over states `0..=n`.
pub fn star_transition_matrix<T: Real>(n: usize) -> Result<DenseMatrix<T>, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::NoLeaves);
    }
    let step = T::one() / T::count(n + 1);
    let mut p = DenseMatrix::zeros(n + 1);
    for m in 0..=n {
        let overtaken = m.max(1);
        for col in 0..overtaken {
            p.set(m, col, step);
        }
        // overtaken <= n, so column n only receives the suppression mass
        p.set(m, n, T::one() - T::count(overtaken) * step);
    }
    Ok(p)
}

fn residual_tolerance<T: Real>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(1e4))
}

/// Stationary distribution of an irreducible chain: solves `q (P - I) = 0`
/// with one equation replaced by `sum q = 1`, by Gaussian elimination with
/// partial pivoting.
pub fn steady_state<T: Real>(p: &DenseMatrix<T>) -> Result<Vec<T>, AnalysisError> {
    let dim = p.dim();
    if dim == 0 {
        return Err(AnalysisError::NotSquare { rows: 0, cols: 0 });
    }
    // Augmented system A x = b with A = (P^T - I), last row all ones.
    let width = dim + 1;
    let mut a = vec![T::zero(); dim * width];
    for i in 0..dim {
        for j in 0..dim {
            let identity = if i == j { T::one() } else { T::zero() };
            a[i * width + j] = p.get(j, i) - identity;
        }
    }
    for j in 0..dim {
        a[(dim - 1) * width + j] = T::one();
    }
    a[(dim - 1) * width + dim] = T::one();

    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&x, &y| {
                let ax = a[x * width + col].abs();
                let ay = a[y * width + col].abs();
                ax.partial_cmp(&ay).expect("finite matrix entries")
            })
            .expect("non-empty range");
        if a[pivot_row * width + col].abs() <= T::epsilon() * T::lit(16.0) {
            return Err(AnalysisError::Singular(col));
        }
        if pivot_row != col {
            for j in 0..width {
                a.swap(pivot_row * width + j, col * width + j);
            }
        }
        let pivot = a[col * width + col];
        for row in (col + 1)..dim {
            let factor = a[row * width + col] / pivot;
            if factor == T::zero() {
                continue;
            }
            for j in col..width {
                let v = a[col * width + j];
                a[row * width + j] = a[row * width + j] - factor * v;
            }
        }
    }
    let mut q = vec![T::zero(); dim];
    for row in (0..dim).rev() {
        let tail = compensated_sum(((row + 1)..dim).map(|j| a[row * width + j] * q[j]));
        q[row] = (a[row * width + dim] - tail) / a[row * width + row];
    }

    let qp = p.left_multiply(&q);
    let residual = qp
        .iter()
        .zip(&q)
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), T::max);
    let tolerance = residual_tolerance::<T>();
    if !(residual <= tolerance) {
        return Err(AnalysisError::Residual { residual: residual.as_f64(), tolerance: tolerance.as_f64() });
    }
    Ok(q)
}

/// Solved finite-`n` star chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovStarResult<T> {
    pub n: usize,
    pub alpha: T,
    pub q: Vec<T>,
    /// Long-run probability that the hub is suppressed, `q_n`.
    pub p_suppress: T,
    pub p_broadcast_central: T,
}

/// Builds and solves the `alpha = 1` hub chain for `n` leaves.
pub fn markov_star<T: Real>(n: usize) -> Result<MarkovStarResult<T>, AnalysisError> {
    let p = star_transition_matrix::<T>(n)?;
    let q = steady_state(&p)?;
    let p_suppress = q[n];
    Ok(MarkovStarResult {
        n,
        alpha: T::one(),
        q,
        p_suppress,
        p_broadcast_central: T::one() - p_suppress,
    })
}
