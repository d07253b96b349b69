//! Fast decoupled WLS state estimation.
//!
//! The iteration follows a fixed nine-step sequence:
//!
//! 1. start from a flat profile;
//! 2. build the constant Jacobians `H_AA = ∂P/∂θ` and `H_RR = ∂Q/∂|V|` and
//!    their gains `G = Hᵀ R⁻¹ H` node by node;
//! 3. factorize both gains once;
//! 4. form the active right-hand side from the nonlinear residual;
//! 5. solve for `Δθ` and update the angles;
//! 6. stop if `max|Δθ^k| ≤ ε_θ` and `max|Δ|V||^{k−1} ≤ ε_V`;
//! 7. form the reactive right-hand side at the new angles;
//! 8. solve for `Δ|V|` and update the magnitudes;
//! 9. stop if both updates of this iteration are below threshold, otherwise
//!    continue with `k + 1`.
//!
//! The angle of the slack (or an area's local slack) is not an unknown; it is
//! held at the graph's reference angle.

pub mod assembly;
pub(crate) mod report;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::network::{build_admittance, BusId, NetworkError, NetworkGraph, NodalAdmittance};
use crate::partition::AreaNetwork;
use crate::sparse::{cholesky, CholeskyFactors, Ordering, SolverError, SparseSpd};
use crate::{MeasurementSet, StateVector};

pub use assembly::{
    assemble_gain, h_evaluate, node_gain, node_jacobian_active, node_jacobian_reactive, rhs_update, Half,
    MeasurementLayout, NodeGain, NodeJacobian, StateColumns,
};
pub use report::{BusState, ReportJson, TraceEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("measurement at bus {0}, which is not in the network")]
    UnknownBus(BusId),
    #[error("flow measurement {at}->{to} has no in-service branch in the network")]
    NoSuchBranch { at: BusId, to: BusId },
    #[error("unobservable {half:?} half: zero pivots at buses {buses:?}")]
    Unobservable { half: Half, buses: Vec<BusId> },
    #[error("invalid options: {0}")]
    Options(String),
    #[error("given Jacobian point has {got} buses, network has {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// State at which the constant Jacobians are evaluated.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum JacobianPoint {
    #[default]
    FlatStart,
    GivenState(StateVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Angle threshold, radians.
    pub eps_theta: f64,
    /// Magnitude threshold, per-unit.
    pub eps_v: f64,
    pub max_iterations: usize,
    pub jacobian_point: JacobianPoint,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_theta: 1e-4,
            eps_v: 1e-4,
            max_iterations: 50,
            jacobian_point: JacobianPoint::FlatStart,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.eps_theta) || !ok(self.eps_v) {
            return Err(EstimateError::Options("thresholds must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(EstimateError::Options("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub area_id: usize,
    /// Bus ids in state order.
    pub buses: Vec<BusId>,
    pub state: StateVector,
    /// Number of angle updates performed.
    pub iterations: usize,
    /// `J(x)` at the returned state.
    pub objective: f64,
    /// `J(x)` at the flat start.
    pub initial_objective: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
}

/// Wall time spent in each phase of one estimation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    pub assembly: Duration,
    pub factorization: Duration,
    pub iteration: Duration,
}

impl std::ops::AddAssign for PhaseTimes {
    fn add_assign(&mut self, rhs: Self) {
        self.assembly += rhs.assembly;
        self.factorization += rhs.factorization;
        self.iteration += rhs.iteration;
    }
}

/// Constant decoupled normal equations of one network and measurement set.
#[derive(Debug, Clone)]
pub struct GainSystem {
    pub active_columns: StateColumns,
    pub reactive_columns: StateColumns,
    pub h_aa: Vec<NodeJacobian>,
    pub h_rr: Vec<NodeJacobian>,
    pub g_aa: SparseSpd,
    pub g_rr: SparseSpd,
    pub factors_aa: Option<CholeskyFactors>,
    pub factors_rr: Option<CholeskyFactors>,
}

impl GainSystem {
    /// Node Jacobians at `point` and the assembled gains.
    pub fn assemble(
        graph: &NetworkGraph,
        adm: &NodalAdmittance,
        layout: &MeasurementLayout,
        point: &StateVector,
    ) -> Self {
        let n = graph.bus_count();
        let active_columns = StateColumns::active(n, graph.slack_index());
        let reactive_columns = StateColumns::reactive(n);
        let h_aa = assembly::half_jacobian(adm, point, &active_columns, layout, Half::Active);
        let h_rr = assembly::half_jacobian(adm, point, &reactive_columns, layout, Half::Reactive);
        let gains = |jacs: &[NodeJacobian], weights: &[f64]| -> Vec<NodeGain> {
            use rayon::prelude::*;
            jacs.par_iter()
                .map(|j| node_gain(j, &weights[j.rows.clone()]))
                .collect()
        };
        let g_aa = assemble_gain(active_columns.order(), &gains(&h_aa, &layout.active_weights));
        let g_rr = assemble_gain(reactive_columns.order(), &gains(&h_rr, &layout.reactive_weights));
        Self {
            active_columns,
            reactive_columns,
            h_aa,
            h_rr,
            g_aa,
            g_rr,
            factors_aa: None,
            factors_rr: None,
        }
    }

    /// Factorizes both gains, naming unobserved buses on failure.
    pub fn factorize(&mut self, graph: &NetworkGraph) -> Result<(), EstimateError> {
        let factor = |g: &SparseSpd, cols: &StateColumns, half: Half| match cholesky(g, Ordering::MinimumDegree) {
            Ok(f) => Ok(f),
            Err(SolverError::NonPositivePivot { columns }) => Err(EstimateError::Unobservable {
                half,
                buses: columns.iter().map(|&c| graph.buses()[cols.bus(c)].id).collect(),
            }),
            Err(e) => Err(e.into()),
        };
        self.factors_aa = Some(factor(&self.g_aa, &self.active_columns, Half::Active)?);
        self.factors_rr = Some(factor(&self.g_rr, &self.reactive_columns, Half::Reactive)?);
        Ok(())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn residuals(z: &[f64], h: &[f64]) -> Vec<f64> {
    z.iter().zip(h).map(|(z, h)| z - h).collect()
}

/// Estimates one area.
pub fn estimate(
    area: &AreaNetwork,
    set: &MeasurementSet,
    opts: &SolverOptions,
) -> Result<EstimationReport, EstimateError> {
    estimate_timed(area, set, opts).map(|(r, _)| r)
}

/// [`estimate`] with a per-phase time breakdown.
pub fn estimate_timed(
    area: &AreaNetwork,
    set: &MeasurementSet,
    opts: &SolverOptions,
) -> Result<(EstimationReport, PhaseTimes), EstimateError> {
    estimate_graph(&area.graph, area.reference_angle, area.area_id, set, opts)
}

/// Estimates `graph`, holding its slack angle at `reference_angle`.
pub fn estimate_graph(
    graph: &NetworkGraph,
    reference_angle: f64,
    area_id: usize,
    set: &MeasurementSet,
    opts: &SolverOptions,
) -> Result<(EstimationReport, PhaseTimes), EstimateError> {
    opts.validate()?;
    let n = graph.bus_count();
    let mut times = PhaseTimes::default();

    let t0 = Instant::now();
    let adm = build_admittance(graph)?;
    let layout = MeasurementLayout::new(graph, set)?;
    // flat start
    let mut x = StateVector::flat(n, reference_angle);
    let point = match &opts.jacobian_point {
        JacobianPoint::FlatStart => x.clone(),
        JacobianPoint::GivenState(s) if s.len() == n => s.clone(),
        JacobianPoint::GivenState(s) => {
            return Err(EstimateError::PointDimension {
                expected: n,
                got: s.len(),
            });
        }
    };
    // constant Jacobians and gains
    let mut system = GainSystem::assemble(graph, &adm, &layout, &point);
    times.assembly = t0.elapsed();

    // factorize once
    let t1 = Instant::now();
    system.factorize(graph)?;
    times.factorization = t1.elapsed();

    let t2 = Instant::now();
    let fa = system.factors_aa.as_ref().expect("factorized");
    let fr = system.factors_rr.as_ref().expect("factorized");
    let objective_at = |x: &StateVector| {
        let (ha, hr) = h_evaluate(&adm, x, &layout);
        assembly::weighted_sum(&residuals(&layout.active_values, &ha), &layout.active_weights)
            + assembly::weighted_sum(&residuals(&layout.reactive_values, &hr), &layout.reactive_weights)
    };
    let initial_objective = objective_at(&x);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev_dv = f64::INFINITY;
    let mut iterations = 0;
    for k in 0..opts.max_iterations {
        iterations = k + 1;
        // angle half
        let ra = residuals(&layout.active_values, &assembly::h_half(&adm, &x, &layout.active));
        let rhs = rhs_update(system.active_columns.order(), &system.h_aa, &layout.active_weights, &ra);
        let dtheta = fa.solve(&rhs)?;
        for (c, d) in dtheta.iter().enumerate() {
            x.angle[system.active_columns.bus(c)] += d;
        }
        let max_dtheta = max_abs(&dtheta);
        // stop if angles settled and the previous magnitude update was small
        if max_dtheta <= opts.eps_theta && prev_dv <= opts.eps_v {
            trace.push(TraceEntry {
                k,
                max_dtheta,
                max_dvmag: None,
            });
            converged = true;
            break;
        }
        // magnitude half
        let rr = residuals(&layout.reactive_values, &assembly::h_half(&adm, &x, &layout.reactive));
        let rhs = rhs_update(
            system.reactive_columns.order(),
            &system.h_rr,
            &layout.reactive_weights,
            &rr,
        );
        let dv = fr.solve(&rhs)?;
        for (c, d) in dv.iter().enumerate() {
            x.vmag[system.reactive_columns.bus(c)] += d;
        }
        let max_dvmag = max_abs(&dv);
        trace.push(TraceEntry {
            k,
            max_dtheta,
            max_dvmag: Some(max_dvmag),
        });
        // stop if both halves settled
        if max_dtheta <= opts.eps_theta && max_dvmag <= opts.eps_v {
            converged = true;
            break;
        }
        prev_dv = max_dvmag;
    }
    let objective = objective_at(&x);
    times.iteration = t2.elapsed();

    Ok((
        EstimationReport {
            area_id,
            buses: graph.bus_ids().collect(),
            state: x,
            iterations,
            objective,
            initial_objective,
            trace,
            converged,
        },
        times,
    ))
}
