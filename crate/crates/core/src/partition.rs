//! Area decomposition along a supplied bus-to-area assignment.
//!
//! Branches whose terminals lie in different areas are cut. Both terminals of
//! a cut branch become reference buses whose voltage phasor is known from a
//! PMU. The power that used to leave a terminal through the cut branch is
//! computed from the two PMU phasors and subtracted from that bus's injection
//! measurements, so each area's equations stay consistent on their own.
//!
//! Each area's angle frame is pinned at its local slack: the global slack if
//! the area contains it, otherwise its lowest-id reference bus, whose PMU
//! angle becomes the area's reference angle.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::{group_by_bus, KindSigmas, Measurement, MeasurementError, MeasurementKind};
use crate::network::io::to_degrees_exact;
use crate::network::{Branch, BusId, NetworkError, NetworkGraph};
use crate::physics::branch_flow;
use crate::{MeasurementSet, StateVector};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("bus {0} has no area assignment")]
    Unassigned(BusId),
    #[error("bus {0} is assigned more than once")]
    DuplicateAssignment(BusId),
    #[error("bus {0} in the partition is not in the network")]
    UnknownBus(BusId),
    #[error("area ids must be dense 0..{count}; area {missing} is empty")]
    EmptyArea { count: usize, missing: usize },
    #[error("boundary bus {0} has no PMU record")]
    MissingPmu(BusId),
    #[error("PMU at bus {bus}: {msg}")]
    BadPmu { bus: BusId, msg: String },
    #[error("area {area} is disconnected after cutting (bus {bus} unreachable)")]
    DisconnectedArea { area: usize, bus: BusId },
    #[error("area {area}: {source}")]
    Area {
        area: usize,
        #[source]
        source: NetworkError,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

/// Bus-to-area assignment with dense area ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    assignment: BTreeMap<BusId, usize>,
    area_count: usize,
}

impl PartitionSpec {
    pub fn new(pairs: impl IntoIterator<Item = (BusId, usize)>) -> Result<Self, PartitionError> {
        let mut assignment = BTreeMap::new();
        for (bus, area) in pairs {
            if assignment.insert(bus, area).is_some() {
                return Err(PartitionError::DuplicateAssignment(bus));
            }
        }
        let area_count = assignment.values().max().map_or(0, |m| m + 1);
        let used: BTreeSet<usize> = assignment.values().copied().collect();
        if let Some(missing) = (0..area_count).find(|a| !used.contains(a)) {
            return Err(PartitionError::EmptyArea {
                count: area_count,
                missing,
            });
        }
        Ok(Self { assignment, area_count })
    }

    /// Every bus of `graph` in area 0.
    pub fn single(graph: &NetworkGraph) -> Self {
        Self {
            assignment: graph.bus_ids().map(|b| (b, 0)).collect(),
            area_count: 1,
        }
    }

    pub fn area_of(&self, bus: BusId) -> Option<usize> {
        self.assignment.get(&bus).copied()
    }

    pub fn area_count(&self) -> usize {
        self.area_count
    }

    pub fn assignment(&self) -> &BTreeMap<BusId, usize> {
        &self.assignment
    }

    /// Checks that the assignment covers exactly the buses of `graph`.
    pub fn check(&self, graph: &NetworkGraph) -> Result<(), PartitionError> {
        if let Some(b) = graph.bus_ids().find(|b| !self.assignment.contains_key(b)) {
            return Err(PartitionError::Unassigned(b));
        }
        if let Some(&b) = self.assignment.keys().find(|&&b| graph.index_of(b).is_none()) {
            return Err(PartitionError::UnknownBus(b));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionRow {
    bus_id: BusId,
    area_id: usize,
}

pub fn read_partition_csv(reader: impl Read) -> Result<PartitionSpec, PartitionError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let rows = rdr
        .deserialize::<PartitionRow>()
        .map(|r| r.map(|r| (r.bus_id, r.area_id)))
        .collect::<Result<Vec<_>, _>>()?;
    PartitionSpec::new(rows)
}

pub fn write_partition_csv(writer: impl Write, spec: &PartitionSpec) -> Result<(), PartitionError> {
    let mut w = csv::Writer::from_writer(writer);
    for (&bus_id, &area_id) in &spec.assignment {
        w.serialize(PartitionRow { bus_id, area_id })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Synchronized voltage phasor at a bus. Sigmas of zero mean exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmuRecord {
    pub bus: BusId,
    pub vmag: f64,
    /// Radians.
    pub angle: f64,
    pub sigma_vmag: f64,
    pub sigma_angle: f64,
}

impl PmuRecord {
    pub fn exact(bus: BusId, vmag: f64, angle: f64) -> Self {
        Self {
            bus,
            vmag,
            angle,
            sigma_vmag: 0.0,
            sigma_angle: 0.0,
        }
    }

    fn validate(&self) -> Result<(), PartitionError> {
        let bad = |msg: &str| PartitionError::BadPmu {
            bus: self.bus,
            msg: msg.into(),
        };
        if !(self.vmag.is_finite() && self.vmag > 0.0) {
            return Err(bad("vmag must be positive"));
        }
        if !self.angle.is_finite() {
            return Err(bad("angle must be finite"));
        }
        if !(self.sigma_vmag >= 0.0 && self.sigma_angle >= 0.0)
            || !self.sigma_vmag.is_finite()
            || !self.sigma_angle.is_finite()
        {
            return Err(bad("sigmas must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PmuRow {
    bus_id: BusId,
    vmag_pu: f64,
    angle_deg: f64,
    sigma_vmag: f64,
    sigma_angle_deg: f64,
}

pub fn read_pmu_csv(reader: impl Read) -> Result<BTreeMap<BusId, PmuRecord>, PartitionError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<PmuRow>().enumerate() {
        let row = row?;
        let rec = PmuRecord {
            bus: row.bus_id,
            vmag: row.vmag_pu,
            angle: row.angle_deg.to_radians(),
            sigma_vmag: row.sigma_vmag,
            sigma_angle: row.sigma_angle_deg.to_radians(),
        };
        rec.validate()?;
        if out.insert(rec.bus, rec).is_some() {
            return Err(PartitionError::Row {
                row: i + 1,
                msg: format!("second PMU record for bus {}", rec.bus),
            });
        }
    }
    Ok(out)
}

pub fn write_pmu_csv<'a>(
    writer: impl Write,
    records: impl IntoIterator<Item = &'a PmuRecord>,
) -> Result<(), PartitionError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(PmuRow {
            bus_id: r.bus,
            vmag_pu: r.vmag,
            angle_deg: to_degrees_exact(r.angle),
            sigma_vmag: r.sigma_vmag,
            sigma_angle_deg: to_degrees_exact(r.sigma_angle),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// PMU records read from `state` at `buses`, optionally with Gaussian noise.
pub fn pmu_from_state(
    graph: &NetworkGraph,
    state: &StateVector,
    buses: impl IntoIterator<Item = BusId>,
    sigma_vmag: f64,
    sigma_angle: f64,
    seed: u64,
) -> BTreeMap<BusId, PmuRecord> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |s: f64| {
        if s > 0.0 {
            Normal::new(0.0, s).expect("finite sigma").sample(&mut rng)
        } else {
            0.0
        }
    };
    let mut out = BTreeMap::new();
    for bus in buses.into_iter().collect::<BTreeSet<_>>() {
        let i = graph.index_of(bus).expect("bus of graph");
        let vmag = state.vmag[i] + noise(sigma_vmag);
        let angle = state.angle[i] + noise(sigma_angle);
        out.insert(
            bus,
            PmuRecord {
                bus,
                vmag,
                angle,
                sigma_vmag,
                sigma_angle,
            },
        );
    }
    out
}

/// A cut branch seen from one of its terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovedBranch {
    /// Index in the original graph's branch list.
    pub index: usize,
    pub branch: Branch,
    pub local_bus: BusId,
    pub local: PmuRecord,
    pub remote: PmuRecord,
}

/// One isolated area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaNetwork {
    pub area_id: usize,
    /// Area subgraph; its slack is `local_slack`.
    pub graph: NetworkGraph,
    /// PMU records of this area's reference buses, ascending bus id.
    pub reference_buses: Vec<PmuRecord>,
    pub removed_branches: Vec<RemovedBranch>,
    /// Complex power leaving each boundary bus through its cut branches.
    pub equivalent_injections: BTreeMap<BusId, Complex64>,
    pub local_slack: BusId,
    /// Angle at which `local_slack` is held, radians.
    pub reference_angle: f64,
}

impl AreaNetwork {
    /// The whole network as a single area.
    pub fn whole(graph: &NetworkGraph) -> Self {
        Self {
            area_id: 0,
            reference_angle: graph.reference_angle(),
            local_slack: graph.slack_bus(),
            graph: graph.clone(),
            reference_buses: Vec::new(),
            removed_branches: Vec::new(),
            equivalent_injections: BTreeMap::new(),
        }
    }

    pub fn is_reference(&self, bus: BusId) -> bool {
        self.reference_buses.binary_search_by_key(&bus, |p| p.bus).is_ok()
    }

    pub fn pmu(&self, bus: BusId) -> Option<&PmuRecord> {
        self.reference_buses
            .binary_search_by_key(&bus, |p| p.bus)
            .ok()
            .map(|k| &self.reference_buses[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub inter_area_branch_count: usize,
    pub boundary_bus_count: usize,
    pub impacted_ratio: f64,
}

/// Complex power leaving `pmu_local.bus` into `branch`, evaluated with both
/// PMU phasors.
pub fn equivalent_injection(branch: &Branch, pmu_local: &PmuRecord, pmu_remote: &PmuRecord) -> Option<Complex64> {
    let (y_self, y_mutual) = branch.terminal(pmu_local.bus)?;
    Some(branch_flow(
        y_self,
        y_mutual,
        (pmu_local.vmag, pmu_local.angle),
        (pmu_remote.vmag, pmu_remote.angle),
    ))
}

/// Counts cut branches and distinct reference buses.
pub fn boundary_report(areas: &[AreaNetwork], total_buses: usize) -> BoundaryReport {
    let cut: BTreeSet<usize> = areas
        .iter()
        .flat_map(|a| a.removed_branches.iter().map(|r| r.index))
        .collect();
    let refs: BTreeSet<BusId> = areas
        .iter()
        .flat_map(|a| a.reference_buses.iter().map(|p| p.bus))
        .collect();
    BoundaryReport {
        inter_area_branch_count: cut.len(),
        boundary_bus_count: refs.len(),
        impacted_ratio: if total_buses == 0 {
            0.0
        } else {
            refs.len() as f64 / total_buses as f64
        },
    }
}

/// Terminals of in-service branches that cross areas, ascending.
pub fn boundary_buses(graph: &NetworkGraph, spec: &PartitionSpec) -> Vec<BusId> {
    let mut out = BTreeSet::new();
    for br in graph.branches().iter().filter(|b| b.in_service) {
        if spec.area_of(br.from_bus) != spec.area_of(br.to_bus) {
            out.insert(br.from_bus);
            out.insert(br.to_bus);
        }
    }
    out.into_iter().collect()
}

/// Cuts `graph` into isolated areas.
///
/// Out-of-service branches joining two areas carry no flow and are dropped
/// without creating reference buses.
pub fn apply_partition(
    graph: &NetworkGraph,
    spec: &PartitionSpec,
    pmu: &BTreeMap<BusId, PmuRecord>,
) -> Result<(Vec<AreaNetwork>, BoundaryReport), PartitionError> {
    spec.check(graph)?;
    let area = |b: BusId| spec.area_of(b).expect("checked assignment");
    let k = spec.area_count();
    let mut buses = vec![Vec::new(); k];
    for bus in graph.buses() {
        buses[area(bus.id)].push(bus.clone());
    }
    let mut branches = vec![Vec::new(); k];
    let mut removed = vec![Vec::new(); k];
    let mut injections = vec![BTreeMap::<BusId, Complex64>::new(); k];
    let record = |b: BusId| -> Result<PmuRecord, PartitionError> {
        let rec = *pmu.get(&b).ok_or(PartitionError::MissingPmu(b))?;
        rec.validate()?;
        Ok(rec)
    };
    for (index, br) in graph.branches().iter().enumerate() {
        let (af, at) = (area(br.from_bus), area(br.to_bus));
        if af == at {
            branches[af].push(br.clone());
            continue;
        }
        if !br.in_service {
            continue;
        }
        let (pf, pt) = (record(br.from_bus)?, record(br.to_bus)?);
        for (a, local, remote) in [(af, pf, pt), (at, pt, pf)] {
            let s = equivalent_injection(br, &local, &remote).ok_or(PartitionError::Area {
                area: a,
                source: NetworkError::DegenerateBranch {
                    index,
                    from: br.from_bus,
                    to: br.to_bus,
                },
            })?;
            *injections[a].entry(local.bus).or_default() += s;
            removed[a].push(RemovedBranch {
                index,
                branch: br.clone(),
                local_bus: local.bus,
                local,
                remote,
            });
        }
    }

    let mut areas = Vec::with_capacity(k);
    for (a, ((area_buses, area_branches), (removed, equivalent_injections))) in buses
        .into_iter()
        .zip(branches)
        .zip(removed.into_iter().zip(injections))
        .enumerate()
    {
        let refs: BTreeSet<BusId> = removed.iter().map(|r| r.local_bus).collect();
        let reference_buses: Vec<PmuRecord> = refs.iter().map(|&b| record(b)).collect::<Result<_, _>>()?;
        let contains_slack = area_buses.iter().any(|b| b.id == graph.slack_bus());
        let (local_slack, reference_angle) = if contains_slack {
            (graph.slack_bus(), graph.reference_angle())
        } else {
            let first = reference_buses.first().ok_or(PartitionError::DisconnectedArea {
                area: a,
                bus: area_buses[0].id,
            })?;
            (first.bus, first.angle)
        };
        let sub = NetworkGraph::new(area_buses, area_branches, local_slack, graph.base_mva()).map_err(|e| match e {
            NetworkError::Disconnected(bus) => PartitionError::DisconnectedArea { area: a, bus },
            other => PartitionError::Area { area: a, source: other },
        })?;
        areas.push(AreaNetwork {
            area_id: a,
            graph: sub,
            reference_buses,
            removed_branches: removed,
            equivalent_injections,
            local_slack,
            reference_angle,
        });
    }
    let report = boundary_report(&areas, graph.bus_count());
    Ok((areas, report))
}

/// The measurements one area uses.
///
/// Keeps measurements located in the area, drops flows on cut branches,
/// compensates injections at boundary buses by the equivalent injections, and
/// appends PMU magnitude and angle rows for every reference bus except the
/// local slack's angle, which is the area's fixed reference. PMU rows with a
/// zero sigma are weighted with the default PMU sigmas of `weights`.
pub fn localize_measurements(
    area: &AreaNetwork,
    raw: impl IntoIterator<Item = Measurement>,
    weights: &KindSigmas,
) -> Result<MeasurementSet, PartitionError> {
    let g = &area.graph;
    let mut out = Vec::new();
    for mut m in raw {
        if g.index_of(m.at_bus).is_none() {
            continue;
        }
        if let Some(to) = m.to_bus {
            if !g.connects(m.at_bus, to) {
                continue;
            }
        }
        if let Some(s) = area.equivalent_injections.get(&m.at_bus) {
            match m.kind {
                MeasurementKind::PInjection => m.value -= s.re,
                MeasurementKind::QInjection => m.value -= s.im,
                _ => {}
            }
        }
        out.push(m);
    }
    let pick = |s: f64, default: f64| if s > 0.0 { s } else { default };
    let defaults = KindSigmas::default();
    for p in &area.reference_buses {
        out.push(Measurement::new(
            MeasurementKind::VMagnitude,
            p.bus,
            p.vmag,
            pick(p.sigma_vmag, pick(weights.pmu_vmag, defaults.pmu_vmag)),
        ));
        if p.bus != area.local_slack {
            out.push(Measurement::new(
                MeasurementKind::VAngle,
                p.bus,
                p.angle,
                pick(p.sigma_angle, pick(weights.pmu_angle, defaults.pmu_angle)),
            ));
        }
    }
    Ok(group_by_bus(g, out)?)
}

/// [`localize_measurements`] for every area.
pub fn localize_all(
    areas: &[AreaNetwork],
    raw: &[Measurement],
    weights: &KindSigmas,
) -> Result<Vec<MeasurementSet>, PartitionError> {
    areas
        .iter()
        .map(|a| localize_measurements(a, raw.iter().cloned(), weights))
        .collect()
}
