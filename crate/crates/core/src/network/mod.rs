//! Grid topology and nodal admittance.
//!
//! A [`NetworkGraph`] holds buses (vertices) and branches (edges). Buses are
//! kept sorted by id, so a bus index is also its rank in id order. Every
//! quantity is per-unit on the system base; angles are radians.

pub mod io;

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BusId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("branch {index} references unknown bus {bus}")]
    DanglingBranch { index: usize, bus: BusId },
    #[error("branch {index} connects bus {bus} to itself")]
    SelfLoop { index: usize, bus: BusId },
    #[error("branch {index} ({from}-{to}) has zero series reactance")]
    DegenerateBranch { index: usize, from: BusId, to: BusId },
    #[error("branch {index} has non-positive tap ratio {tap}")]
    InvalidTap { index: usize, tap: f64 },
    #[error("branch {index} has a non-finite parameter")]
    NonFiniteBranch { index: usize },
    #[error("bus {0} has a non-finite or non-positive voltage")]
    InvalidVoltage(BusId),
    #[error("no slack bus")]
    MissingSlack,
    #[error("slack bus {0} is not a bus of the network")]
    UnknownSlack(BusId),
    #[error("network is empty")]
    Empty,
    #[error("network is not connected: bus {0} is unreachable from the slack")]
    Disconnected(BusId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

/// A vertex of the grid graph.
///
/// `p_inj`/`q_inj` are the scheduled net injections (generation minus load)
/// and `v_set` the regulated voltage of slack/generator buses. They only feed
/// the reference power flow; estimation never reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub shunt_g: f64,
    pub shunt_b: f64,
    pub p_inj: f64,
    pub q_inj: f64,
    pub v_set: Option<f64>,
    pub true_vmag: Option<f64>,
    pub true_angle: Option<f64>,
}

impl Bus {
    pub fn new(id: BusId, kind: BusKind) -> Self {
        Self {
            id,
            kind,
            shunt_g: 0.0,
            shunt_b: 0.0,
            p_inj: 0.0,
            q_inj: 0.0,
            v_set: None,
            true_vmag: None,
            true_angle: None,
        }
    }
}

/// A π-model branch. `tap_ratio` and `phase_shift` sit on the from side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap_ratio: f64,
    pub phase_shift: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn line(from_bus: BusId, to_bus: BusId, r: f64, x: f64, b_charging: f64) -> Self {
        Self {
            from_bus,
            to_bus,
            r,
            x,
            b_charging,
            tap_ratio: 1.0,
            phase_shift: 0.0,
            in_service: true,
        }
    }

    /// The four π-model admittances `[y_ff, y_ft, y_tf, y_tt]`.
    pub fn admittances(&self) -> Option<[Complex64; 4]> {
        if self.x == 0.0 {
            return None;
        }
        let ys = Complex64::new(self.r, self.x).inv();
        let half_b = Complex64::new(0.0, self.b_charging / 2.0);
        let tap = Complex64::from_polar(self.tap_ratio, self.phase_shift);
        let yff = (ys + half_b) / (self.tap_ratio * self.tap_ratio);
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        let ytt = ys + half_b;
        Some([yff, yft, ytf, ytt])
    }

    /// Self and mutual admittance seen from the terminal at `bus`.
    pub fn terminal(&self, bus: BusId) -> Option<(Complex64, Complex64)> {
        let [yff, yft, ytf, ytt] = self.admittances()?;
        if bus == self.from_bus {
            Some((yff, yft))
        } else if bus == self.to_bus {
            Some((ytt, ytf))
        } else {
            None
        }
    }

    pub fn other_end(&self, bus: BusId) -> BusId {
        if bus == self.from_bus {
            self.to_bus
        } else {
            self.from_bus
        }
    }
}

/// The grid graph G = (V, E).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    adjacency: Vec<Vec<usize>>,
    slack_bus: BusId,
    base_mva: f64,
    index: HashMap<BusId, usize>,
}

impl NetworkGraph {
    /// Validates and indexes a bus/branch set. Buses are reordered by id.
    /// The graph must be connected through in-service branches.
    pub fn new(
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        slack_bus: BusId,
        base_mva: f64,
    ) -> Result<Self, NetworkError> {
        if buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        buses.sort_by_key(|b| b.id);
        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(NetworkError::DuplicateBus(bus.id));
            }
            let bad_v = |v: Option<f64>| v.is_some_and(|v| !(v.is_finite() && v > 0.0));
            if bad_v(bus.true_vmag) || bad_v(bus.v_set) {
                return Err(NetworkError::InvalidVoltage(bus.id));
            }
        }
        if !index.contains_key(&slack_bus) {
            return Err(NetworkError::UnknownSlack(slack_bus));
        }
        let mut adjacency = vec![Vec::new(); buses.len()];
        for (k, br) in branches.iter().enumerate() {
            for bus in [br.from_bus, br.to_bus] {
                if !index.contains_key(&bus) {
                    return Err(NetworkError::DanglingBranch { index: k, bus });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(NetworkError::SelfLoop {
                    index: k,
                    bus: br.from_bus,
                });
            }
            let params = [br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift];
            if params.iter().any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFiniteBranch { index: k });
            }
            if br.tap_ratio <= 0.0 {
                return Err(NetworkError::InvalidTap {
                    index: k,
                    tap: br.tap_ratio,
                });
            }
            if br.in_service {
                adjacency[index[&br.from_bus]].push(k);
                adjacency[index[&br.to_bus]].push(k);
            }
        }
        let graph = Self {
            buses,
            branches,
            adjacency,
            slack_bus,
            base_mva,
            index,
        };
        if let Some(bus) = graph.first_unreachable() {
            return Err(NetworkError::Disconnected(bus));
        }
        Ok(graph)
    }

    fn first_unreachable(&self) -> Option<BusId> {
        let n = self.buses.len();
        let mut seen = vec![false; n];
        let start = self.index[&self.slack_bus];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &k in &self.adjacency[i] {
                let j = self.index[&self.branches[k].other_end(self.buses[i].id)];
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.iter().position(|s| !s).map(|i| self.buses[i].id)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// In-service branch indices incident to the bus at `index`.
    pub fn incident(&self, index: usize) -> &[usize] {
        &self.adjacency[index]
    }

    pub fn slack_bus(&self) -> BusId {
        self.slack_bus
    }

    pub fn slack_index(&self) -> usize {
        self.index[&self.slack_bus]
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.index_of(id).map(|i| &self.buses[i])
    }

    pub fn bus_ids(&self) -> impl Iterator<Item = BusId> + '_ {
        self.buses.iter().map(|b| b.id)
    }

    /// Angle the slack is pinned to: its recorded angle, or zero.
    pub fn reference_angle(&self) -> f64 {
        self.buses[self.slack_index()].true_angle.unwrap_or(0.0)
    }

    /// True when at least one in-service branch joins `a` and `b`.
    pub fn connects(&self, a: BusId, b: BusId) -> bool {
        self.index_of(a)
            .is_some_and(|i| self.adjacency[i].iter().any(|&k| self.branches[k].other_end(a) == b))
    }

    /// Same buses and branches anchored at another slack.
    pub fn with_slack(&self, slack_bus: BusId) -> Result<Self, NetworkError> {
        Self::new(self.buses.clone(), self.branches.clone(), slack_bus, self.base_mva)
    }

    /// Recorded solution, when every bus carries one.
    pub fn true_state(&self) -> Option<crate::StateVector> {
        let angle = self.buses.iter().map(|b| b.true_angle).collect::<Option<Vec<_>>>()?;
        let vmag = self.buses.iter().map(|b| b.true_vmag).collect::<Option<Vec<_>>>()?;
        Some(crate::StateVector { angle, vmag })
    }

    /// Copy of the graph with the given state recorded as truth.
    pub fn with_true_state(&self, state: &crate::StateVector) -> Self {
        let mut out = self.clone();
        for (i, bus) in out.buses.iter_mut().enumerate() {
            bus.true_angle = Some(state.angle[i]);
            bus.true_vmag = Some(state.vmag[i]);
        }
        out
    }
}

/// Admittance seen from one bus towards one neighbour, summed over parallel
/// branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    pub neighbor: usize,
    /// Contribution of these branches to the bus's own diagonal.
    pub y_self: Complex64,
    /// Mutual (off-diagonal) admittance towards `neighbor`.
    pub y_mutual: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodalAdmittance {
    pub diagonal: Vec<Complex64>,
    /// Per bus, sorted by neighbour index.
    pub terminals: Vec<Vec<Terminal>>,
}

impl NodalAdmittance {
    pub fn off_diagonal(&self, graph: &NetworkGraph, from: BusId, to: BusId) -> Option<Complex64> {
        let i = graph.index_of(from)?;
        let j = graph.index_of(to)?;
        self.terminal(i, j).map(|t| t.y_mutual)
    }

    pub fn terminal(&self, i: usize, j: usize) -> Option<&Terminal> {
        let row = &self.terminals[i];
        row.binary_search_by_key(&j, |t| t.neighbor).ok().map(|p| &row[p])
    }
}

/// Diagonal and terminals of one bus from the bus and its incident branches.
pub fn bus_admittance(graph: &NetworkGraph, index: usize) -> Result<(Complex64, Vec<Terminal>), NetworkError> {
    let bus = &graph.buses[index];
    let mut terminals: Vec<Terminal> = Vec::with_capacity(graph.adjacency[index].len());
    for &k in &graph.adjacency[index] {
        let br = &graph.branches[k];
        let (y_self, y_mutual) = br.terminal(bus.id).ok_or(NetworkError::DegenerateBranch {
            index: k,
            from: br.from_bus,
            to: br.to_bus,
        })?;
        let neighbor = graph.index[&br.other_end(bus.id)];
        match terminals.iter_mut().find(|t| t.neighbor == neighbor) {
            Some(t) => {
                t.y_self += y_self;
                t.y_mutual += y_mutual;
            }
            None => terminals.push(Terminal {
                neighbor,
                y_self,
                y_mutual,
            }),
        }
    }
    terminals.sort_by_key(|t| t.neighbor);
    let mut diagonal = Complex64::new(bus.shunt_g, bus.shunt_b);
    for t in &terminals {
        diagonal += t.y_self;
    }
    Ok((diagonal, terminals))
}

/// Nodal admittance, assembled as an independent per-bus map.
pub fn build_admittance(graph: &NetworkGraph) -> Result<NodalAdmittance, NetworkError> {
    let rows: Vec<_> = (0..graph.bus_count())
        .into_par_iter()
        .map(|i| bus_admittance(graph, i))
        .collect::<Result<_, _>>()?;
    let (diagonal, terminals) = rows.into_iter().unzip();
    Ok(NodalAdmittance { diagonal, terminals })
}
