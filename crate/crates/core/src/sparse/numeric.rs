use rayon::prelude::*;

use super::{SolverError, SparseSpd, SymbolicFactor};

/// Levels narrower than this are processed on the calling thread.
const PARALLEL_MIN_WIDTH: usize = 64;

/// Relative pivot threshold against the largest diagonal entry of the input.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Numeric Cholesky factor `P A Pᵀ = L Lᵀ` for one symbolic analysis.
#[derive(Debug, Clone)]
pub struct CholeskyFactors {
    symbolic: SymbolicFactor,
    values: Vec<f64>,
}

enum Column {
    Ok(Vec<f64>),
    BadPivot(Vec<f64>),
}

fn eliminate_column(
    sym: &SymbolicFactor,
    c_values: &[f64],
    l_values: &[f64],
    j: usize,
    x: &mut [f64],
    tol: f64,
) -> Column {
    let pattern = &sym.l_row_idx[sym.l_col_ptr[j]..sym.l_col_ptr[j + 1]];
    let span = sym.c_col_ptr[j]..sym.c_col_ptr[j + 1];
    for (&r, &v) in sym.c_row_idx[span.clone()].iter().zip(&c_values[span]) {
        x[r] = v;
    }
    for q in sym.r_ptr[j]..sym.r_ptr[j + 1] {
        let k = sym.r_col[q];
        let pos = sym.r_pos[q];
        let ljk = l_values[pos];
        for p in pos..sym.l_col_ptr[k + 1] {
            x[sym.l_row_idx[p]] -= l_values[p] * ljk;
        }
    }
    let d = x[j];
    let out = if d > tol && d.is_finite() {
        let ljj = d.sqrt();
        let mut col = Vec::with_capacity(pattern.len());
        col.push(ljj);
        col.extend(pattern[1..].iter().map(|&r| x[r] / ljj));
        Column::Ok(col)
    } else {
        // unit column so the remaining columns can still be inspected
        let mut col = vec![0.0; pattern.len()];
        col[0] = 1.0;
        Column::BadPivot(col)
    };
    for &r in pattern {
        x[r] = 0.0;
    }
    out
}

/// Numeric factorization of `a`, which must have the pattern `sym` was built
/// from. Every column whose pivot falls below `1e-12 * max diag(A)` is
/// reported, in original indexing.
pub fn factorize(a: &SparseSpd, sym: &SymbolicFactor) -> Result<CholeskyFactors, SolverError> {
    if a.order() != sym.order {
        return Err(SolverError::Dimension {
            expected: sym.order,
            got: a.order(),
        });
    }
    if a.col_ptr() != sym.a_col_ptr.as_slice() || a.row_idx() != sym.a_row_idx.as_slice() {
        return Err(SolverError::Format("pattern differs from the analysed matrix".into()));
    }
    let n = sym.order;
    let mut c_values = vec![0.0; sym.c_row_idx.len()];
    for (k, &v) in a.values().iter().enumerate() {
        c_values[sym.a_to_c[k]] = v;
    }
    let tol = PIVOT_TOLERANCE * a.max_diagonal();
    let mut l_values = vec![0.0; sym.l_row_idx.len()];
    let mut bad = Vec::new();
    let mut work = vec![0.0; n];

    for level in &sym.schedule.levels {
        let columns: Vec<Column> = if level.len() >= PARALLEL_MIN_WIDTH && rayon::current_num_threads() > 1 {
            let lv = &l_values;
            let cv = &c_values;
            level
                .par_iter()
                .map_init(|| vec![0.0; n], |x, &j| eliminate_column(sym, cv, lv, j, x, tol))
                .collect()
        } else {
            level
                .iter()
                .map(|&j| eliminate_column(sym, &c_values, &l_values, j, &mut work, tol))
                .collect()
        };
        for (&j, col) in level.iter().zip(columns) {
            let col = match col {
                Column::Ok(c) => c,
                Column::BadPivot(c) => {
                    bad.push(sym.perm[j]);
                    c
                }
            };
            l_values[sym.l_col_ptr[j]..sym.l_col_ptr[j + 1]].copy_from_slice(&col);
        }
    }
    if !bad.is_empty() {
        bad.sort_unstable();
        return Err(SolverError::NonPositivePivot { columns: bad });
    }
    Ok(CholeskyFactors {
        symbolic: sym.clone(),
        values: l_values,
    })
}

impl CholeskyFactors {
    pub fn order(&self) -> usize {
        self.symbolic.order
    }

    pub fn symbolic(&self) -> &SymbolicFactor {
        &self.symbolic
    }

    /// Entry `L(row, col)` in permuted indexing.
    pub fn l_entry(&self, row: usize, col: usize) -> f64 {
        let pattern = self.symbolic.column_pattern(col);
        match pattern.binary_search(&row) {
            Ok(p) => self.values[self.symbolic.l_col_ptr[col] + p],
            Err(_) => 0.0,
        }
    }

    /// Dense `L`, permuted indexing, row-major.
    #[allow(clippy::needless_range_loop)]
    pub fn l_dense(&self) -> Vec<Vec<f64>> {
        let n = self.order();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            for (k, &r) in self.symbolic.column_pattern(j).iter().enumerate() {
                l[r][j] = self.values[self.symbolic.l_col_ptr[j] + k];
            }
        }
        l
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let sym = &self.symbolic;
        let n = sym.order;
        if b.len() != n {
            return Err(SolverError::Dimension {
                expected: n,
                got: b.len(),
            });
        }
        let mut y: Vec<f64> = sym.perm.iter().map(|&old| b[old]).collect();
        let diag = |j: usize| self.values[sym.l_col_ptr[j]];

        // L y = Pb, level order
        for level in &sym.schedule.levels {
            let forward = |j: usize, y: &[f64]| {
                let mut s = y[j];
                for q in sym.r_ptr[j]..sym.r_ptr[j + 1] {
                    s -= self.values[sym.r_pos[q]] * y[sym.r_col[q]];
                }
                s / diag(j)
            };
            self.apply_level(level, &mut y, forward);
        }
        // Lᵀ x = y, reverse level order
        for level in sym.schedule.levels.iter().rev() {
            let backward = |j: usize, y: &[f64]| {
                let mut s = y[j];
                for p in sym.l_col_ptr[j] + 1..sym.l_col_ptr[j + 1] {
                    s -= self.values[p] * y[sym.l_row_idx[p]];
                }
                s / diag(j)
            };
            self.apply_level(level, &mut y, backward);
        }
        let mut x = vec![0.0; n];
        for (new, &old) in sym.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    fn apply_level<F>(&self, level: &[usize], y: &mut [f64], f: F)
    where
        F: Fn(usize, &[f64]) -> f64 + Sync,
    {
        if level.len() >= PARALLEL_MIN_WIDTH && rayon::current_num_threads() > 1 {
            let ys: &[f64] = y;
            let out: Vec<f64> = level.par_iter().map(|&j| f(j, ys)).collect();
            for (&j, v) in level.iter().zip(out) {
                y[j] = v;
            }
        } else {
            for &j in level {
                let v = f(j, y);
                y[j] = v;
            }
        }
    }
}
