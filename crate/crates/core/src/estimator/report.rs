use serde::{Deserialize, Serialize};

use crate::network::io::to_degrees_exact;
use crate::network::BusId;

use super::EstimationReport;

/// Largest updates of one iteration. `max_dvmag` is absent when the loop
/// stopped at the angle test, before the magnitudes were updated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    pub max_dtheta: f64,
    pub max_dvmag: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusState {
    pub bus: BusId,
    pub vmag_pu: f64,
    pub angle_deg: f64,
}

/// File form of an [`EstimationReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub area_id: usize,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub states: Vec<BusState>,
    pub trace: Vec<TraceEntry>,
}

pub(crate) fn bus_states(buses: &[BusId], angle: &[f64], vmag: &[f64]) -> Vec<BusState> {
    buses
        .iter()
        .zip(angle.iter().zip(vmag))
        .map(|(&bus, (&a, &v))| BusState {
            bus,
            vmag_pu: v,
            angle_deg: to_degrees_exact(a),
        })
        .collect()
}

impl From<&EstimationReport> for ReportJson {
    fn from(r: &EstimationReport) -> Self {
        Self {
            area_id: r.area_id,
            converged: r.converged,
            iterations: r.iterations,
            objective: r.objective,
            states: bus_states(&r.buses, &r.state.angle, &r.state.vmag),
            trace: r.trace.clone(),
        }
    }
}

impl EstimationReport {
    pub fn to_json(&self) -> ReportJson {
        self.into()
    }
}
