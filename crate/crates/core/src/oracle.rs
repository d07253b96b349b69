//! Dense reference engines.
//!
//! Everything here is built straight from the branch list with dense linear
//! algebra and rectangular complex arithmetic, sharing no code with the sparse
//! estimator beyond the data types, so the two can check each other. Sizes
//! beyond a few hundred buses are not a goal.

use num_complex::Complex64;
use thiserror::Error;

use crate::estimator::{EstimationReport, SolverOptions, TraceEntry};
use crate::measurement::{Measurement, MeasurementKind};
use crate::network::{BusKind, NetworkGraph};
use crate::{MeasurementSet, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("matrix is singular or not positive definite at pivot {0}")]
    Singular(usize),
    #[error("no convergence after {0} iterations")]
    Divergence(usize),
    #[error("measurement references bus {0} outside the network")]
    UnknownBus(u32),
    #[error("branch {0} has zero series impedance")]
    Degenerate(usize),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }

    /// `Aᵀ diag(w) A`.
    pub fn weighted_gram(&self, w: &[f64]) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.cols, self.cols);
        for (r, &wr) in w.iter().enumerate().take(self.rows) {
            for a in 0..self.cols {
                let ha = wr * self.get(r, a);
                if ha == 0.0 {
                    continue;
                }
                for b in 0..self.cols {
                    g.add(a, b, ha * self.get(r, b));
                }
            }
        }
        g
    }

    /// `Aᵀ diag(w) v`.
    pub fn weighted_transpose_mul(&self, w: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.get(r, c) * w[r] * v[r];
            }
        }
        out
    }

    /// Lower Cholesky factor, row-major.
    pub fn cholesky(&self) -> Result<DenseMatrix, OracleError> {
        let n = self.rows;
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d.is_nan() || d <= 0.0 {
                return Err(OracleError::Singular(j));
            }
            let djj = d.sqrt();
            l.set(j, j, djj);
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / djj);
            }
        }
        Ok(l)
    }

    pub fn cholesky_solve(&self, b: &[f64]) -> Result<Vec<f64>, OracleError> {
        let l = self.cholesky()?;
        let n = self.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l.get(i, k) * y[k];
            }
            y[i] /= l.get(i, i);
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= l.get(k, i) * y[k];
            }
            y[i] /= l.get(i, i);
        }
        Ok(y)
    }

    /// Gaussian elimination with partial pivoting.
    pub fn lu_solve(&self, b: &[f64]) -> Result<Vec<f64>, OracleError> {
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
                .expect("non-empty range");
            if a[piv * n + col] == 0.0 {
                return Err(OracleError::Singular(col));
            }
            if piv != col {
                for c in 0..n {
                    a.swap(piv * n + c, col * n + c);
                }
                x.swap(piv, col);
            }
            for r in col + 1..n {
                let f = a[r * n + col] / a[col * n + col];
                if f == 0.0 {
                    continue;
                }
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                x[r] -= f * x[col];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                x[r] -= a[r * n + c] * x[c];
            }
            x[r] /= a[r * n + r];
        }
        Ok(x)
    }
}

/// Full bus admittance matrix.
pub fn dense_ybus(graph: &NetworkGraph) -> Result<Vec<Vec<Complex64>>, OracleError> {
    let n = graph.bus_count();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (i, bus) in graph.buses().iter().enumerate() {
        y[i][i] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    for (k, br) in graph.branches().iter().enumerate().filter(|(_, b)| b.in_service) {
        let [yff, yft, ytf, ytt] = branch_pi(graph, k)?;
        let f = graph.index_of(br.from_bus).expect("valid branch");
        let t = graph.index_of(br.to_bus).expect("valid branch");
        y[f][f] += yff;
        y[f][t] += yft;
        y[t][f] += ytf;
        y[t][t] += ytt;
    }
    Ok(y)
}

fn branch_pi(graph: &NetworkGraph, k: usize) -> Result<[Complex64; 4], OracleError> {
    let br = &graph.branches()[k];
    let z = Complex64::new(br.r, br.x);
    if br.x == 0.0 {
        return Err(OracleError::Degenerate(k));
    }
    let ys = z.inv();
    let half_b = Complex64::new(0.0, br.b_charging / 2.0);
    let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
    Ok([
        (ys + half_b) / (br.tap_ratio * br.tap_ratio),
        -ys / tap.conj(),
        -ys / tap,
        ys + half_b,
    ])
}

fn phasors(state: &StateVector) -> Vec<Complex64> {
    state
        .vmag
        .iter()
        .zip(&state.angle)
        .map(|(&v, &a)| Complex64::from_polar(v, a))
        .collect()
}

/// A power measurement written as `S = V_i conj(Σ_k y_k V_k)`.
struct PowerRow {
    at: usize,
    coeffs: Vec<(usize, Complex64)>,
}

fn power_row(graph: &NetworkGraph, ybus: &[Vec<Complex64>], m: &Measurement) -> Result<PowerRow, OracleError> {
    let at = graph.index_of(m.at_bus).ok_or(OracleError::UnknownBus(m.at_bus))?;
    let coeffs = if m.kind.is_flow() {
        let to_id = m.to_bus.expect("flow has to_bus");
        let to = graph.index_of(to_id).ok_or(OracleError::UnknownBus(to_id))?;
        let mut own = Complex64::new(0.0, 0.0);
        let mut other = Complex64::new(0.0, 0.0);
        for (k, br) in graph.branches().iter().enumerate().filter(|(_, b)| b.in_service) {
            let [yff, yft, ytf, ytt] = branch_pi(graph, k)?;
            if br.from_bus == m.at_bus && br.to_bus == to_id {
                own += yff;
                other += yft;
            } else if br.to_bus == m.at_bus && br.from_bus == to_id {
                own += ytt;
                other += ytf;
            }
        }
        vec![(at, own), (to, other)]
    } else {
        ybus[at]
            .iter()
            .enumerate()
            .filter(|(_, y)| y.norm() != 0.0)
            .map(|(k, y)| (k, *y))
            .collect()
    };
    Ok(PowerRow { at, coeffs })
}

impl PowerRow {
    fn value(&self, v: &[Complex64]) -> Complex64 {
        let i: Complex64 = self.coeffs.iter().map(|&(k, y)| y * v[k]).sum();
        v[self.at] * i.conj()
    }

    /// `(∂S/∂θ_k, ∂S/∂|V_k|)` for every bus in the row.
    fn partials(&self, v: &[Complex64]) -> Vec<(usize, Complex64, Complex64)> {
        let j = Complex64::new(0.0, 1.0);
        let vi = v[self.at];
        let i: Complex64 = self.coeffs.iter().map(|&(k, y)| y * v[k]).sum();
        let mut out: Vec<(usize, Complex64, Complex64)> = self
            .coeffs
            .iter()
            .map(|&(k, y)| {
                let t = vi * (y * v[k]).conj();
                (k, -j * t, t / v[k].norm())
            })
            .collect();
        let own_theta = j * vi * i.conj();
        let own_v = vi / vi.norm() * i.conj();
        match out.iter_mut().find(|e| e.0 == self.at) {
            Some(e) => {
                e.1 += own_theta;
                e.2 += own_v;
            }
            None => out.push((self.at, own_theta, own_v)),
        }
        out
    }
}

/// Measurement model over a whole set, active rows then reactive rows.
pub struct DenseModel<'g> {
    graph: &'g NetworkGraph,
    rows: Vec<(Measurement, Option<PowerRow>)>,
}

impl<'g> DenseModel<'g> {
    pub fn new(graph: &'g NetworkGraph, measurements: &[Measurement]) -> Result<Self, OracleError> {
        let ybus = dense_ybus(graph)?;
        let rows = measurements
            .iter()
            .map(|m| {
                graph.index_of(m.at_bus).ok_or(OracleError::UnknownBus(m.at_bus))?;
                let row = match m.kind {
                    MeasurementKind::VMagnitude | MeasurementKind::VAngle => None,
                    _ => Some(power_row(graph, &ybus, m)?),
                };
                Ok((m.clone(), row))
            })
            .collect::<Result<_, OracleError>>()?;
        Ok(Self { graph, rows })
    }

    pub fn values(&self, state: &StateVector) -> Vec<f64> {
        let v = phasors(state);
        self.rows
            .iter()
            .map(|(m, row)| {
                let i = self.graph.index_of(m.at_bus).expect("checked");
                match (m.kind, row) {
                    (MeasurementKind::VMagnitude, _) => state.vmag[i],
                    (MeasurementKind::VAngle, _) => state.angle[i],
                    (k, Some(row)) => {
                        let s = row.value(&v);
                        if k.is_active() {
                            s.re
                        } else {
                            s.im
                        }
                    }
                    (_, None) => unreachable!("power rows are built"),
                }
            })
            .collect()
    }

    /// Full Jacobian: columns are angles of every bus then magnitudes of
    /// every bus.
    pub fn jacobian(&self, state: &StateVector) -> DenseMatrix {
        let n = self.graph.bus_count();
        let v = phasors(state);
        let mut h = DenseMatrix::zeros(self.rows.len(), 2 * n);
        for (r, (m, row)) in self.rows.iter().enumerate() {
            let i = self.graph.index_of(m.at_bus).expect("checked");
            match (m.kind, row) {
                (MeasurementKind::VAngle, _) => h.set(r, i, 1.0),
                (MeasurementKind::VMagnitude, _) => h.set(r, n + i, 1.0),
                (k, Some(row)) => {
                    for (b, dt, dv) in row.partials(&v) {
                        let (a, m) = if k.is_active() { (dt.re, dv.re) } else { (dt.im, dv.im) };
                        h.add(r, b, a);
                        h.add(r, n + b, m);
                    }
                }
                (_, None) => unreachable!("power rows are built"),
            }
        }
        h
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|(m, _)| m.weight()).collect()
    }

    pub fn values_of_measurements(&self) -> Vec<f64> {
        self.rows.iter().map(|(m, _)| m.value).collect()
    }
}

/// Keeps the listed columns of `h`.
pub fn select_columns(h: &DenseMatrix, rows: std::ops::Range<usize>, cols: &[usize]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(rows.len(), cols.len());
    for (r, src) in rows.enumerate() {
        for (c, &k) in cols.iter().enumerate() {
            out.set(r, c, h.get(src, k));
        }
    }
    out
}

/// Decoupled blocks `(H_AA, H_RR)` at `state`: active rows against non-slack
/// angles, reactive rows against all magnitudes.
pub fn decoupled_jacobians(
    graph: &NetworkGraph,
    set: &MeasurementSet,
    state: &StateVector,
) -> Result<(DenseMatrix, DenseMatrix), OracleError> {
    let n = graph.bus_count();
    let model = DenseModel::new(graph, &set.to_vec())?;
    let h = model.jacobian(state);
    let slack = graph.slack_index();
    let angle_cols: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let vmag_cols: Vec<usize> = (n..2 * n).collect();
    let na = set.active.len();
    Ok((
        select_columns(&h, 0..na, &angle_cols),
        select_columns(&h, na..na + set.reactive.len(), &vmag_cols),
    ))
}

/// Newton-Raphson power flow in polar form on the scheduled injections.
///
/// Slack and generator buses hold their set-point magnitude (recorded
/// magnitude, else 1.0); the slack holds its recorded angle (else 0).
/// Converges when every mismatch is at most 1e-10 pu.
pub fn newton_powerflow(graph: &NetworkGraph) -> Result<StateVector, OracleError> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 30;
    let n = graph.bus_count();
    let ybus = dense_ybus(graph)?;
    let slack = graph.slack_index();
    let buses = graph.buses();
    let mut state = StateVector::flat(n, graph.reference_angle());
    for (i, b) in buses.iter().enumerate() {
        if b.kind != BusKind::Load {
            state.vmag[i] = b.v_set.or(b.true_vmag).unwrap_or(1.0);
        }
    }
    let theta_idx: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let v_idx: Vec<usize> = (0..n)
        .filter(|&i| i != slack && buses[i].kind == BusKind::Load)
        .collect();
    let rows: Vec<PowerRow> = (0..n)
        .map(|i| PowerRow {
            at: i,
            coeffs: ybus[i]
                .iter()
                .enumerate()
                .filter(|(_, y)| y.norm() != 0.0)
                .map(|(k, y)| (k, *y))
                .collect(),
        })
        .collect();
    let mut col_of = vec![(None, None); n];
    for (c, &i) in theta_idx.iter().enumerate() {
        col_of[i].0 = Some(c);
    }
    for (c, &i) in v_idx.iter().enumerate() {
        col_of[i].1 = Some(theta_idx.len() + c);
    }
    let dim = theta_idx.len() + v_idx.len();
    for _ in 0..MAX_ITER {
        let v = phasors(&state);
        let s: Vec<Complex64> = rows.iter().map(|r| r.value(&v)).collect();
        let mut mis = Vec::with_capacity(dim);
        mis.extend(theta_idx.iter().map(|&i| buses[i].p_inj - s[i].re));
        mis.extend(v_idx.iter().map(|&i| buses[i].q_inj - s[i].im));
        if mis.iter().all(|m| m.abs() <= TOL) {
            return Ok(state);
        }
        let mut jac = DenseMatrix::zeros(dim, dim);
        for (r, &i) in theta_idx.iter().enumerate() {
            for (b, dt, dv) in rows[i].partials(&v) {
                if let Some(c) = col_of[b].0 {
                    jac.add(r, c, dt.re);
                }
                if let Some(c) = col_of[b].1 {
                    jac.add(r, c, dv.re);
                }
            }
        }
        for (r, &i) in v_idx.iter().enumerate() {
            let r = theta_idx.len() + r;
            for (b, dt, dv) in rows[i].partials(&v) {
                if let Some(c) = col_of[b].0 {
                    jac.add(r, c, dt.im);
                }
                if let Some(c) = col_of[b].1 {
                    jac.add(r, c, dv.im);
                }
            }
        }
        let dx = jac.lu_solve(&mis)?;
        for (c, &i) in theta_idx.iter().enumerate() {
            state.angle[i] += dx[c];
        }
        for (c, &i) in v_idx.iter().enumerate() {
            state.vmag[i] += dx[theta_idx.len() + c];
        }
    }
    Err(OracleError::Divergence(MAX_ITER))
}

/// Coupled Gauss-Newton WLS with the full Jacobian rebuilt every iteration.
///
/// Stops when the largest angle update is at most `eps_theta` and the largest
/// magnitude update at most `eps_v`.
pub fn full_newton_wls(
    graph: &NetworkGraph,
    reference_angle: f64,
    set: &MeasurementSet,
    opts: &SolverOptions,
) -> Result<EstimationReport, OracleError> {
    let n = graph.bus_count();
    let model = DenseModel::new(graph, &set.to_vec())?;
    let z = model.values_of_measurements();
    let w = model.weights();
    let slack = graph.slack_index();
    let cols: Vec<usize> = (0..2 * n).filter(|&c| c != slack).collect();
    let mut x = StateVector::flat(n, reference_angle);
    let objective = |x: &StateVector| -> f64 {
        let h = model.values(x);
        z.iter().zip(&h).zip(&w).map(|((z, h), w)| w * (z - h) * (z - h)).sum()
    };
    let initial_objective = objective(&x);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..opts.max_iterations {
        iterations = k + 1;
        let h = select_columns(&model.jacobian(&x), 0..z.len(), &cols);
        let r: Vec<f64> = z.iter().zip(model.values(&x)).map(|(z, h)| z - h).collect();
        let g = h.weighted_gram(&w);
        let rhs = h.weighted_transpose_mul(&w, &r);
        let dx = g.cholesky_solve(&rhs)?;
        let (mut dt, mut dv) = (0.0f64, 0.0f64);
        for (&c, d) in cols.iter().zip(&dx) {
            if c < n {
                x.angle[c] += d;
                dt = dt.max(d.abs());
            } else {
                x.vmag[c - n] += d;
                dv = dv.max(d.abs());
            }
        }
        trace.push(TraceEntry {
            k,
            max_dtheta: dt,
            max_dvmag: Some(dv),
        });
        if dt <= opts.eps_theta && dv <= opts.eps_v {
            converged = true;
            break;
        }
    }
    Ok(EstimationReport {
        area_id: 0,
        buses: graph.bus_ids().collect(),
        objective: objective(&x),
        state: x,
        iterations,
        initial_objective,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, Bus};
    use approx::assert_abs_diff_eq;

    #[test]
    fn dense_solvers_agree() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0, 0.0], vec![2.0, 5.0, 1.0], vec![0.0, 1.0, 3.0]]);
        let b = [1.0, 2.0, 3.0];
        let x1 = a.cholesky_solve(&b).unwrap();
        let x2 = a.lu_solve(&b).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-14);
        }
        let back = a.mul_vec(&x1);
        for (p, q) in back.iter().zip(&b) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-14);
        }
        let indefinite = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(indefinite.cholesky(), Err(OracleError::Singular(1)));
    }

    fn two_bus_load(p: f64) -> NetworkGraph {
        let mut load = Bus::new(2, BusKind::Load);
        load.p_inj = p;
        NetworkGraph::new(
            vec![Bus::new(1, BusKind::Slack), load],
            vec![Branch::line(1, 2, 0.0, 0.1, 0.0)],
            1,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn no_load_flow_is_flat() {
        let s = newton_powerflow(&two_bus_load(0.0)).unwrap();
        assert_eq!(s, StateVector::flat(2, 0.0));
    }

    #[test]
    fn two_bus_angle_inverts_sine() {
        // lossless line: P_2 = -sin(θ_1 - θ_2) V_1 V_2 / x with Q_2 = 0
        let p = -(0.1f64).sin() / 0.1;
        let g = two_bus_load(p);
        let s = newton_powerflow(&g).unwrap();
        // with Q_2 = 0 the magnitude sags slightly, so the angle is near -0.1
        assert!((s.angle[1] + 0.1).abs() < 0.01, "{}", s.angle[1]);
        let model = DenseModel::new(&g, &[Measurement::new(MeasurementKind::PInjection, 2, 0.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(model.values(&s)[0], p, epsilon = 1e-10);
    }
}
