//! Measurement model and bus-grouped layout.
//!
//! Measurements are split into an active half (P injections, P flows, angle
//! phasors) and a reactive half (Q injections, Q flows, voltage magnitudes),
//! and inside each half they are grouped by the bus they are taken at. A bus
//! group holds every measurement "directly related" to that bus, so it can be
//! processed from one-hop data only.
//!
//! A flow measurement `at -> to` is the total flow leaving `at` over all
//! in-service branches that join the two buses.

use std::io::{Read, Write};
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{build_admittance, BusId, NetworkError, NetworkGraph};
use crate::physics::{self, Located};
use crate::StateVector;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("measurement at unknown bus {0}")]
    UnknownBus(BusId),
    #[error("flow measurement {at}->{to} has no in-service branch")]
    NoSuchBranch { at: BusId, to: BusId },
    #[error("{kind:?} measurement at bus {at}: to_bus must be set exactly for flows")]
    ToBusMismatch { kind: MeasurementKind, at: BusId },
    #[error("measurement at bus {at} has non-positive or non-finite sigma {sigma}")]
    BadSigma { at: BusId, sigma: f64 },
    #[error("measurement at bus {0} has a non-finite value")]
    BadValue(BusId),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Declaration order is the sort order inside a bus group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MeasurementKind {
    #[serde(rename = "P_injection")]
    PInjection,
    #[serde(rename = "Q_injection")]
    QInjection,
    #[serde(rename = "P_flow")]
    PFlow,
    #[serde(rename = "Q_flow")]
    QFlow,
    #[serde(rename = "V_magnitude")]
    VMagnitude,
    #[serde(rename = "V_angle")]
    VAngle,
}

impl MeasurementKind {
    pub const ALL: [MeasurementKind; 6] = [
        MeasurementKind::PInjection,
        MeasurementKind::QInjection,
        MeasurementKind::PFlow,
        MeasurementKind::QFlow,
        MeasurementKind::VMagnitude,
        MeasurementKind::VAngle,
    ];

    /// Belongs to the angle (active) half of the decoupled problem.
    pub fn is_active(self) -> bool {
        matches!(
            self,
            MeasurementKind::PInjection | MeasurementKind::PFlow | MeasurementKind::VAngle
        )
    }

    pub fn is_flow(self) -> bool {
        matches!(self, MeasurementKind::PFlow | MeasurementKind::QFlow)
    }

    pub fn label(self) -> &'static str {
        match self {
            MeasurementKind::PInjection => "P_injection",
            MeasurementKind::QInjection => "Q_injection",
            MeasurementKind::PFlow => "P_flow",
            MeasurementKind::QFlow => "Q_flow",
            MeasurementKind::VMagnitude => "V_magnitude",
            MeasurementKind::VAngle => "V_angle",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub at_bus: BusId,
    pub to_bus: Option<BusId>,
    /// Per-unit; radians for angles.
    pub value: f64,
    pub sigma: f64,
}

impl Measurement {
    pub fn new(kind: MeasurementKind, at_bus: BusId, value: f64, sigma: f64) -> Self {
        Self {
            kind,
            at_bus,
            to_bus: None,
            value,
            sigma,
        }
    }

    pub fn flow(kind: MeasurementKind, at_bus: BusId, to_bus: BusId, value: f64, sigma: f64) -> Self {
        Self {
            kind,
            at_bus,
            to_bus: Some(to_bus),
            value,
            sigma,
        }
    }

    fn sort_key(&self) -> (BusId, MeasurementKind, Option<BusId>, u64, u64) {
        (
            self.at_bus,
            self.kind,
            self.to_bus,
            self.value.to_bits(),
            self.sigma.to_bits(),
        )
    }

    pub fn weight(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

/// Contiguous run of one bus's measurements inside a half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusGroup {
    pub bus: BusId,
    pub range: Range<usize>,
}

/// Diagonal of R⁻¹ for one half, aligned with its measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub inverse_variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub active: Vec<Measurement>,
    pub reactive: Vec<Measurement>,
    pub active_groups: Vec<BusGroup>,
    pub reactive_groups: Vec<BusGroup>,
}

impl MeasurementSet {
    pub fn m_total(&self) -> usize {
        self.active.len() + self.reactive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_total() == 0
    }

    pub fn active_weights(&self) -> WeightVector {
        WeightVector {
            inverse_variances: self.active.iter().map(Measurement::weight).collect(),
        }
    }

    pub fn reactive_weights(&self) -> WeightVector {
        WeightVector {
            inverse_variances: self.reactive.iter().map(Measurement::weight).collect(),
        }
    }

    /// Both halves, active first.
    pub fn iter(&self) -> impl Iterator<Item = &Measurement> {
        self.active.iter().chain(self.reactive.iter())
    }

    pub fn to_vec(&self) -> Vec<Measurement> {
        self.iter().cloned().collect()
    }
}

fn check(graph: &NetworkGraph, m: &Measurement) -> Result<(), MeasurementError> {
    if graph.index_of(m.at_bus).is_none() {
        return Err(MeasurementError::UnknownBus(m.at_bus));
    }
    if !(m.sigma.is_finite() && m.sigma > 0.0) {
        return Err(MeasurementError::BadSigma {
            at: m.at_bus,
            sigma: m.sigma,
        });
    }
    if !m.value.is_finite() {
        return Err(MeasurementError::BadValue(m.at_bus));
    }
    match (m.kind.is_flow(), m.to_bus) {
        (true, Some(to)) => {
            if graph.index_of(to).is_none() {
                return Err(MeasurementError::UnknownBus(to));
            }
            if !graph.connects(m.at_bus, to) {
                return Err(MeasurementError::NoSuchBranch { at: m.at_bus, to });
            }
        }
        (false, None) => {}
        _ => {
            return Err(MeasurementError::ToBusMismatch {
                kind: m.kind,
                at: m.at_bus,
            })
        }
    }
    Ok(())
}

fn groups(ms: &[Measurement]) -> Vec<BusGroup> {
    let mut out: Vec<BusGroup> = Vec::new();
    for (i, m) in ms.iter().enumerate() {
        match out.last_mut() {
            Some(g) if g.bus == m.at_bus => g.range.end = i + 1,
            _ => out.push(BusGroup {
                bus: m.at_bus,
                range: i..i + 1,
            }),
        }
    }
    out
}

/// Split into active/reactive halves and order each by (bus, kind, to_bus).
pub fn group_by_bus(
    graph: &NetworkGraph,
    raw: impl IntoIterator<Item = Measurement>,
) -> Result<MeasurementSet, MeasurementError> {
    let (mut active, mut reactive): (Vec<_>, Vec<_>) = raw.into_iter().partition(|m| m.kind.is_active());
    for m in active.iter().chain(reactive.iter()) {
        check(graph, m)?;
    }
    active.sort_by_key(Measurement::sort_key);
    reactive.sort_by_key(Measurement::sort_key);
    Ok(MeasurementSet {
        active_groups: groups(&active),
        reactive_groups: groups(&reactive),
        active,
        reactive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowCoverage {
    None,
    FromEnd,
    BothEnds,
}

/// Which measurements to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoveragePlan {
    pub injections: bool,
    pub flows: FlowCoverage,
    pub vmag: bool,
}

impl Default for CoveragePlan {
    fn default() -> Self {
        Self {
            injections: true,
            flows: FlowCoverage::FromEnd,
            vmag: true,
        }
    }
}

/// Standard deviation per measurement family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindSigmas {
    pub power: f64,
    pub vmag: f64,
    pub pmu_vmag: f64,
    pub pmu_angle: f64,
}

impl Default for KindSigmas {
    fn default() -> Self {
        Self {
            power: 0.01,
            vmag: 0.004,
            pmu_vmag: 1e-4,
            pmu_angle: 1e-4,
        }
    }
}

impl KindSigmas {
    pub fn noise_free() -> Self {
        Self {
            power: 0.0,
            vmag: 0.0,
            pmu_vmag: 0.0,
            pmu_angle: 0.0,
        }
    }

    pub fn for_kind(&self, kind: MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::VMagnitude => self.vmag,
            MeasurementKind::VAngle => self.pmu_angle,
            _ => self.power,
        }
    }

    /// Weighting sigma: the configured one, or the default when it is zero.
    pub fn weight_sigma(&self, kind: MeasurementKind) -> f64 {
        let s = self.for_kind(kind);
        if s > 0.0 {
            s
        } else {
            KindSigmas::default().for_kind(kind)
        }
    }
}

/// Measurements `h(truth) + noise` following `plan`.
///
/// A zero sigma for a family makes those values exact; they are then weighted
/// with the default sigma of the family.
pub fn synthesize(
    graph: &NetworkGraph,
    truth: &StateVector,
    plan: CoveragePlan,
    noise_seed: u64,
    sigmas: &KindSigmas,
) -> Result<MeasurementSet, MeasurementError> {
    let adm = build_admittance(graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut raw = Vec::new();
    let mut add = |kind: MeasurementKind, at: BusId, to: Option<BusId>, rng: &mut ChaCha8Rng| {
        let loc = Located {
            kind,
            at: graph.index_of(at).expect("bus of graph"),
            to: to.map(|t| graph.index_of(t).expect("bus of graph")),
        };
        let exact = physics::value(&adm, truth, &loc);
        let noise_sigma = sigmas.for_kind(kind);
        let value = if noise_sigma > 0.0 {
            exact + Normal::new(0.0, noise_sigma).expect("finite sigma").sample(rng)
        } else {
            exact
        };
        raw.push(Measurement {
            kind,
            at_bus: at,
            to_bus: to,
            value,
            sigma: sigmas.weight_sigma(kind),
        });
    };
    for bus in graph.buses() {
        if plan.injections {
            add(MeasurementKind::PInjection, bus.id, None, &mut rng);
            add(MeasurementKind::QInjection, bus.id, None, &mut rng);
        }
        if plan.vmag {
            add(MeasurementKind::VMagnitude, bus.id, None, &mut rng);
        }
    }
    if plan.flows != FlowCoverage::None {
        let mut pairs: Vec<(BusId, BusId)> = Vec::new();
        for br in graph.branches().iter().filter(|b| b.in_service) {
            pairs.push((br.from_bus, br.to_bus));
            if plan.flows == FlowCoverage::BothEnds {
                pairs.push((br.to_bus, br.from_bus));
            }
        }
        // parallel branches share one measurement per measuring end
        let mut seen = std::collections::HashSet::new();
        pairs.retain(|p| seen.insert(*p));
        for (at, to) in pairs {
            add(MeasurementKind::PFlow, at, Some(to), &mut rng);
            add(MeasurementKind::QFlow, at, Some(to), &mut rng);
        }
    }
    group_by_bus(graph, raw)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    kind: String,
    at_bus: BusId,
    to_bus: Option<BusId>,
    value: f64,
    sigma: f64,
}

/// Reads `kind,at_bus,to_bus,value,sigma`; angle values and sigmas in degrees.
pub fn read_measurement_csv(reader: impl Read) -> Result<Vec<Measurement>, MeasurementError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let kind = MeasurementKind::from_label(&row.kind).ok_or_else(|| MeasurementError::Row {
            row: i + 1,
            msg: format!("unknown kind `{}`", row.kind),
        })?;
        let (value, sigma) = if kind == MeasurementKind::VAngle {
            (row.value.to_radians(), row.sigma.to_radians())
        } else {
            (row.value, row.sigma)
        };
        out.push(Measurement {
            kind,
            at_bus: row.at_bus,
            to_bus: row.to_bus,
            value,
            sigma,
        });
    }
    Ok(out)
}

pub fn parse_measurement_csv(text: &str) -> Result<Vec<Measurement>, MeasurementError> {
    read_measurement_csv(text.as_bytes())
}

pub fn write_measurement_csv<'a>(
    writer: impl Write,
    ms: impl IntoIterator<Item = &'a Measurement>,
) -> Result<(), MeasurementError> {
    let mut w = csv::Writer::from_writer(writer);
    for m in ms {
        let (value, sigma) = if m.kind == MeasurementKind::VAngle {
            (
                crate::network::io::to_degrees_exact(m.value),
                crate::network::io::to_degrees_exact(m.sigma),
            )
        } else {
            (m.value, m.sigma)
        };
        w.serialize(CsvRow {
            kind: m.kind.label().to_string(),
            at_bus: m.at_bus,
            to_bus: m.to_bus,
            value,
            sigma,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
