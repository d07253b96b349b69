//! MatrixMarket coordinate files, `real symmetric`, 1-based lower triangle.

use std::fmt::Write as _;

use super::{SolverError, SparseSpd};

const BANNER: &str = "%%MatrixMarket matrix coordinate real symmetric";

fn err(msg: impl Into<String>) -> SolverError {
    SolverError::Format(msg.into())
}

pub fn parse_coordinate(text: &str) -> Result<SparseSpd, SolverError> {
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines.next().ok_or_else(|| err("empty input"))?;
    let words: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" || words[2] != "coordinate" {
        return Err(err("missing coordinate banner"));
    }
    if words[3] != "real" || words[4] != "symmetric" {
        return Err(err(format!("unsupported field/symmetry {} {}", words[3], words[4])));
    }
    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (_, size) = body.next().ok_or_else(|| err("missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| err(format!("bad size line: {size}"))))
        .collect::<Result<_, _>>()?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(err(format!("bad size line: {size}")));
    };
    if rows != cols {
        return Err(err(format!("matrix is {rows}x{cols}, not square")));
    }
    let mut triplets = Vec::with_capacity(nnz.min(1 << 20));
    for (lineno, line) in body {
        let mut it = line.split_whitespace();
        let (Some(i), Some(j), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(err(format!("line {}: expected `row col value`", lineno + 1)));
        };
        let parse_idx = |s: &str| -> Result<usize, SolverError> {
            match s.parse::<usize>() {
                Ok(k) if k >= 1 && k <= rows => Ok(k - 1),
                _ => Err(err(format!("line {}: index {s} outside 1..={rows}", lineno + 1))),
            }
        };
        let v: f64 = v
            .parse()
            .map_err(|_| err(format!("line {}: bad value {v}", lineno + 1)))?;
        if !v.is_finite() {
            return Err(err(format!("line {}: non-finite value", lineno + 1)));
        }
        triplets.push((parse_idx(i)?, parse_idx(j)?, v));
    }
    if triplets.len() != nnz {
        return Err(err(format!("declared {nnz} entries, found {}", triplets.len())));
    }
    SparseSpd::from_triplets(rows, triplets)
}

pub fn write_coordinate(a: &SparseSpd) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{BANNER}");
    let _ = writeln!(out, "{} {} {}", a.order(), a.order(), a.nnz_lower());
    for c in 0..a.order() {
        let (rows, vals) = a.column(c);
        for (&r, &v) in rows.iter().zip(vals) {
            let _ = writeln!(out, "{} {} {:e}", r + 1, c + 1, v);
        }
    }
    out
}
