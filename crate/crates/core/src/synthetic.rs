//! Large test grids tiled from a solved base case.
//!
//! Copy `c` of the base renumbers bus `id` to `c * 1000 + id` and scales each
//! branch's r, x and charging by independent factors in [0.95, 1.05]. Copies
//! are split into contiguous areas. Consecutive copies inside an area are
//! joined by a tie from `intra_port` to the next copy's `entry_port`;
//! consecutive areas by one tie from `inter_port` of the last copy to the
//! `entry_port` of the next area's first copy, giving `areas - 1` inter-area
//! ties. The last copy keeps a breadth-first prefix of the base rooted at
//! `entry_port` so the total size is exact.
//!
//! The true state of each copy is the base truth plus a small per-copy angle
//! offset. Scheduled injections are set to the values implied by that state,
//! so the grid is a solved case in its own right.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::measurement::MeasurementKind;
use crate::network::{build_admittance, Branch, Bus, BusId, BusKind, NetworkError, NetworkGraph};
use crate::partition::PartitionSpec;
use crate::physics::{self, Located};
use crate::StateVector;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("base case has no recorded true state")]
    NoTruth,
    #[error("base bus ids must be below 1000")]
    IdRange,
    #[error("port bus {0} not in base case")]
    MissingPort(BusId),
    #[error("{size} buses give {copies} copies, fewer than {areas} areas")]
    TooSmall { size: usize, copies: usize, areas: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilePorts {
    pub entry: BusId,
    pub intra: BusId,
    pub inter: BusId,
}

impl Default for TilePorts {
    /// Ports suited to the 118-bus base.
    fn default() -> Self {
        Self {
            entry: 8,
            intra: 80,
            inter: 49,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGrid {
    pub graph: NetworkGraph,
    pub partition: PartitionSpec,
    pub truth: StateVector,
}

fn bfs_prefix(base: &NetworkGraph, root: BusId, keep: usize) -> BTreeSet<BusId> {
    let mut seen = BTreeSet::from([root]);
    let mut order = vec![root];
    let mut queue = VecDeque::from([root]);
    while let Some(b) = queue.pop_front() {
        if order.len() >= keep {
            break;
        }
        let i = base.index_of(b).expect("bus of base");
        let mut next: Vec<BusId> = base
            .incident(i)
            .iter()
            .map(|&k| base.branches()[k].other_end(b))
            .collect();
        next.sort_unstable();
        for nb in next {
            if order.len() < keep && seen.insert(nb) {
                order.push(nb);
                queue.push_back(nb);
            }
        }
    }
    seen
}

/// Tiles `base` into a connected grid of exactly `size` buses in `areas`
/// areas.
pub fn tile(
    base: &NetworkGraph,
    size: usize,
    areas: usize,
    ports: TilePorts,
    seed: u64,
) -> Result<SyntheticGrid, SyntheticError> {
    let truth = base.true_state().ok_or(SyntheticError::NoTruth)?;
    if base.bus_ids().any(|b| b >= 1000) {
        return Err(SyntheticError::IdRange);
    }
    for p in [ports.entry, ports.intra, ports.inter] {
        base.index_of(p).ok_or(SyntheticError::MissingPort(p))?;
    }
    let n_base = base.bus_count();
    let copies = size.div_ceil(n_base).max(1);
    if copies < areas || areas == 0 {
        return Err(SyntheticError::TooSmall { size, copies, areas });
    }
    let last_keep = size - (copies - 1) * n_base;
    let area_of_copy = |c: usize| c * areas / copies;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let renumber = |c: usize, id: BusId| c as BusId * 1000 + id;

    let mut buses = Vec::with_capacity(size);
    let mut branches = Vec::new();
    let mut assignment = Vec::with_capacity(size);
    let mut true_angle: BTreeMap<BusId, (f64, f64)> = BTreeMap::new();
    for c in 0..copies {
        let kept: BTreeSet<BusId> = if c + 1 == copies {
            bfs_prefix(base, ports.entry, last_keep)
        } else {
            base.bus_ids().collect()
        };
        let offset = if c == 0 { 0.0 } else { rng.random_range(-0.02..0.02) };
        for (i, b) in base.buses().iter().enumerate() {
            if !kept.contains(&b.id) {
                continue;
            }
            let mut nb = Bus {
                id: renumber(c, b.id),
                ..b.clone()
            };
            if b.kind == BusKind::Slack && c > 0 {
                nb.kind = BusKind::Generator;
            }
            true_angle.insert(nb.id, (truth.angle[i] + offset, truth.vmag[i]));
            assignment.push((nb.id, area_of_copy(c)));
            buses.push(nb);
        }
        for br in base.branches() {
            if !(kept.contains(&br.from_bus) && kept.contains(&br.to_bus)) {
                continue;
            }
            let mut f = || rng.random_range(0.95..1.05);
            branches.push(Branch {
                from_bus: renumber(c, br.from_bus),
                to_bus: renumber(c, br.to_bus),
                r: br.r * f(),
                x: br.x * f(),
                b_charging: br.b_charging * f(),
                ..br.clone()
            });
        }
        if c + 1 < copies {
            let port = if area_of_copy(c) == area_of_copy(c + 1) {
                ports.intra
            } else {
                ports.inter
            };
            branches.push(Branch::line(
                renumber(c, port),
                renumber(c + 1, ports.entry),
                0.005,
                0.05,
                0.02,
            ));
        }
    }
    for b in &mut buses {
        let (a, v) = true_angle[&b.id];
        b.true_angle = Some(a);
        b.true_vmag = Some(v);
    }
    let slack = renumber(0, base.slack_bus());
    let graph = NetworkGraph::new(buses, branches, slack, base.base_mva())?;
    let truth = graph.true_state().expect("every bus has truth");

    // schedule the injections implied by the true state
    let adm = build_admittance(&graph)?;
    let mut buses = graph.buses().to_vec();
    for (i, b) in buses.iter_mut().enumerate() {
        let at = |kind| Located { kind, at: i, to: None };
        b.p_inj = physics::value(&adm, &truth, &at(MeasurementKind::PInjection));
        b.q_inj = physics::value(&adm, &truth, &at(MeasurementKind::QInjection));
        if b.kind != BusKind::Load {
            b.v_set = Some(truth.vmag[i]);
        }
    }
    let graph = NetworkGraph::new(buses, graph.branches().to_vec(), slack, graph.base_mva())?;
    let partition = PartitionSpec::new(assignment).expect("dense areas by construction");
    Ok(SyntheticGrid {
        graph,
        partition,
        truth,
    })
}
