//! Sparse symmetric positive-definite systems.
//!
//! Factorization is split in three steps: a fill-reducing ordering, symbolic
//! analysis (fill pattern, elimination tree, level schedule), and a numeric
//! left-looking Cholesky whose columns are computed level by level. Columns in
//! one level never depend on each other, so each level is processed in
//! parallel with a barrier before the next. The triangular solves use the same
//! schedule (forward in level order, backward in reverse).

mod coordinate;
mod numeric;
mod ordering;
mod symbolic;

pub use coordinate::{parse_coordinate, write_coordinate};
pub use numeric::{factorize, CholeskyFactors};
pub use ordering::{minimum_degree, Ordering};
pub use symbolic::{symbolic_analyze, EliminationTree, LevelSchedule, SymbolicFactor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("column {0} has no diagonal entry")]
    StructurallySingular(usize),
    #[error("non-positive pivot in columns {columns:?}")]
    NonPositivePivot { columns: Vec<usize> },
    #[error("entry ({row}, {col}) outside a matrix of order {order}")]
    OutOfBounds { row: usize, col: usize, order: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("ordering is not a permutation of 0..{0}")]
    BadPermutation(usize),
    #[error("coordinate format: {0}")]
    Format(String),
}

/// Lower triangle (with diagonal) of a symmetric matrix, compressed by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    order: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Builds from `(row, col, value)` triplets. Upper entries are mirrored
    /// into the lower triangle and duplicates are summed in input order.
    pub fn from_triplets(
        order: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, SolverError> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= order || c >= order {
                return Err(SolverError::OutOfBounds { row: r, col: c, order });
            }
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            entries.push((c, r, v));
        }
        // stable: duplicates keep their input order for summation
        entries.sort_by_key(|&(c, r, _)| (c, r));
        let mut col_ptr = vec![0; order + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in entries {
            if last == Some((c, r)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for c in 0..order {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self {
            order,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// From a pattern already in lower CSC form with sorted rows.
    pub(crate) fn from_parts(order: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(col_ptr.len(), order + 1);
        debug_assert_eq!(row_idx.len(), values.len());
        Self {
            order,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn identity(order: usize) -> Self {
        Self::from_parts(order, (0..=order).collect(), (0..order).collect(), vec![1.0; order])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nnz_lower(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of lower column `c`.
    pub fn column(&self, c: usize) -> (&[usize], &[f64]) {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.row_idx[span.clone()], &self.values[span])
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Position of `(row, col)` (lower, `row >= col`) in the value array.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (rows, _) = self.column(col);
        rows.binary_search(&row).ok().map(|p| self.col_ptr[col] + p)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        self.position(r, c).map_or(0.0, |p| self.values[p])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.order).map(|c| self.get(c, c)).fold(0.0, f64::max)
    }

    /// `y = A x` using both triangles.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.order];
        for c in 0..self.order {
            let (rows, vals) = self.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    /// Full symmetric dense copy, row-major.
    #[allow(clippy::needless_range_loop)]
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.order]; self.order];
        for c in 0..self.order {
            let (rows, vals) = self.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                d[r][c] = v;
                d[c][r] = v;
            }
        }
        d
    }
}

/// Ordering, symbolic analysis and numeric factorization in one call.
pub fn cholesky(a: &SparseSpd, ordering: Ordering) -> Result<CholeskyFactors, SolverError> {
    let sym = symbolic_analyze(a, ordering)?;
    factorize(a, &sym)
}
