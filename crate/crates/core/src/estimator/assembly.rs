//! Node-based Jacobian, gain and right-hand-side construction.
//!
//! Every bus owns the measurements grouped under it. Its Jacobian rows touch
//! only the bus and its neighbours, so each node block is computed from one-hop
//! data. Blocks are formed in parallel and then summed in bus order, which
//! keeps every sum independent of scheduling.

use std::ops::Range;

use rayon::prelude::*;

use crate::measurement::MeasurementSet;
use crate::network::{BusId, NetworkGraph, NodalAdmittance};
use crate::physics::{self, Located};
use crate::sparse::SparseSpd;
use crate::StateVector;

use super::EstimateError;

/// Which half of the decoupled problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    /// Angles, driven by P and angle measurements.
    Active,
    /// Magnitudes, driven by Q and magnitude measurements.
    Reactive,
}

/// Maps bus indices to unknowns of one half. The active half drops the slack
/// angle; the reactive half keeps every magnitude.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateColumns {
    column_of: Vec<Option<usize>>,
    bus_of: Vec<usize>,
}

impl StateColumns {
    pub fn active(n: usize, slack: usize) -> Self {
        Self::without(n, Some(slack))
    }

    pub fn reactive(n: usize) -> Self {
        Self::without(n, None)
    }

    fn without(n: usize, skip: Option<usize>) -> Self {
        let mut column_of = vec![None; n];
        let mut bus_of = Vec::with_capacity(n);
        for (i, c) in column_of.iter_mut().enumerate() {
            if Some(i) != skip {
                *c = Some(bus_of.len());
                bus_of.push(i);
            }
        }
        Self { column_of, bus_of }
    }

    pub fn order(&self) -> usize {
        self.bus_of.len()
    }

    pub fn column(&self, bus: usize) -> Option<usize> {
        self.column_of[bus]
    }

    pub fn bus(&self, column: usize) -> usize {
        self.bus_of[column]
    }
}

/// One bus group with its measurements resolved to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedGroup {
    pub bus: usize,
    pub range: Range<usize>,
}

/// A measurement set resolved against one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLayout {
    pub active: Vec<Located>,
    pub reactive: Vec<Located>,
    pub active_groups: Vec<LocatedGroup>,
    pub reactive_groups: Vec<LocatedGroup>,
    pub active_values: Vec<f64>,
    pub reactive_values: Vec<f64>,
    pub active_weights: Vec<f64>,
    pub reactive_weights: Vec<f64>,
}

impl MeasurementLayout {
    pub fn new(graph: &NetworkGraph, set: &MeasurementSet) -> Result<Self, EstimateError> {
        let find = |id: BusId| graph.index_of(id).ok_or(EstimateError::UnknownBus(id));
        let locate = |ms: &[crate::Measurement]| -> Result<Vec<Located>, EstimateError> {
            ms.iter()
                .map(|m| {
                    let to = m.to_bus.map(find).transpose()?;
                    if let Some(t) = m.to_bus {
                        if !graph.connects(m.at_bus, t) {
                            return Err(EstimateError::NoSuchBranch { at: m.at_bus, to: t });
                        }
                    }
                    Ok(Located {
                        kind: m.kind,
                        at: find(m.at_bus)?,
                        to,
                    })
                })
                .collect()
        };
        let groups = |gs: &[crate::measurement::BusGroup]| -> Result<Vec<LocatedGroup>, EstimateError> {
            gs.iter()
                .map(|g| {
                    Ok(LocatedGroup {
                        bus: find(g.bus)?,
                        range: g.range.clone(),
                    })
                })
                .collect()
        };
        Ok(Self {
            active: locate(&set.active)?,
            reactive: locate(&set.reactive)?,
            active_groups: groups(&set.active_groups)?,
            reactive_groups: groups(&set.reactive_groups)?,
            active_values: set.active.iter().map(|m| m.value).collect(),
            reactive_values: set.reactive.iter().map(|m| m.value).collect(),
            active_weights: set.active_weights().inverse_variances,
            reactive_weights: set.reactive_weights().inverse_variances,
        })
    }

    pub fn half(&self, half: Half) -> (&[Located], &[LocatedGroup], &[f64], &[f64]) {
        match half {
            Half::Active => (
                &self.active,
                &self.active_groups,
                &self.active_values,
                &self.active_weights,
            ),
            Half::Reactive => (
                &self.reactive,
                &self.reactive_groups,
                &self.reactive_values,
                &self.reactive_weights,
            ),
        }
    }
}

/// Measurement model of one half, in measurement order.
pub fn h_half(adm: &NodalAdmittance, state: &StateVector, rows: &[Located]) -> Vec<f64> {
    rows.par_iter().map(|m| physics::value(adm, state, m)).collect()
}

/// `(h_A(x), h_R(x))`.
pub fn h_evaluate(adm: &NodalAdmittance, state: &StateVector, layout: &MeasurementLayout) -> (Vec<f64>, Vec<f64>) {
    (h_half(adm, state, &layout.active), h_half(adm, state, &layout.reactive))
}

/// Jacobian rows of one bus group, dense over a sorted column support.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeJacobian {
    pub bus: usize,
    /// Rows of the half this block covers.
    pub rows: Range<usize>,
    /// Unknowns touched, ascending.
    pub columns: Vec<usize>,
    /// Row-major `rows.len() x columns.len()`.
    pub entries: Vec<f64>,
}

impl NodeJacobian {
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.columns.len();
        &self.entries[r * w..(r + 1) * w]
    }
}

/// Jacobian block of the measurements grouped at `group.bus`.
pub fn node_jacobian(
    adm: &NodalAdmittance,
    point: &StateVector,
    columns: &StateColumns,
    rows: &[Located],
    group: &LocatedGroup,
    half: Half,
) -> NodeJacobian {
    let i = group.bus;
    let mut support: Vec<usize> = std::iter::once(i)
        .chain(adm.terminals[i].iter().map(|t| t.neighbor))
        .filter_map(|b| columns.column(b))
        .collect();
    support.sort_unstable();
    let width = support.len();
    let mut entries = vec![0.0; group.range.len() * width];
    for (r, m) in rows[group.range.clone()].iter().enumerate() {
        let g = physics::gradient(adm, point, m);
        let partials = match half {
            Half::Active => &g.d_angle,
            Half::Reactive => &g.d_vmag,
        };
        for &(bus, d) in partials {
            if let Some(c) = columns.column(bus) {
                let pos = support.binary_search(&c).expect("gradient stays within one hop");
                entries[r * width + pos] += d;
            }
        }
    }
    NodeJacobian {
        bus: i,
        rows: group.range.clone(),
        columns: support,
        entries,
    }
}

pub fn node_jacobian_active(
    adm: &NodalAdmittance,
    point: &StateVector,
    columns: &StateColumns,
    layout: &MeasurementLayout,
    group: usize,
) -> NodeJacobian {
    node_jacobian(
        adm,
        point,
        columns,
        &layout.active,
        &layout.active_groups[group],
        Half::Active,
    )
}

pub fn node_jacobian_reactive(
    adm: &NodalAdmittance,
    point: &StateVector,
    columns: &StateColumns,
    layout: &MeasurementLayout,
    group: usize,
) -> NodeJacobian {
    node_jacobian(
        adm,
        point,
        columns,
        &layout.reactive,
        &layout.reactive_groups[group],
        Half::Reactive,
    )
}

/// All node blocks of one half, in bus order.
pub fn half_jacobian(
    adm: &NodalAdmittance,
    point: &StateVector,
    columns: &StateColumns,
    layout: &MeasurementLayout,
    half: Half,
) -> Vec<NodeJacobian> {
    let (rows, groups, _, _) = layout.half(half);
    groups
        .par_iter()
        .map(|g| node_jacobian(adm, point, columns, rows, g, half))
        .collect()
}

/// `H_iᵀ R_i⁻¹ H_i` over the block's column support.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGain {
    pub bus: usize,
    pub columns: Vec<usize>,
    /// Row-major, symmetric.
    pub block: Vec<f64>,
}

/// `weights` are the inverse variances of the block's rows.
pub fn node_gain(jac: &NodeJacobian, weights: &[f64]) -> NodeGain {
    let w = jac.columns.len();
    let mut block = vec![0.0; w * w];
    for (r, &wt) in weights.iter().enumerate() {
        let row = jac.row(r);
        for a in 0..w {
            let ra = wt * row[a];
            for b in 0..w {
                block[a * w + b] += ra * row[b];
            }
        }
    }
    NodeGain {
        bus: jac.bus,
        columns: jac.columns.clone(),
        block,
    }
}

/// Sums node gains into a sparse matrix of the given order.
///
/// Contributions are applied in ascending bus order whatever the input order,
/// and every diagonal is present so that an unobserved unknown shows up as a
/// zero pivot rather than a missing column.
pub fn assemble_gain(order: usize, gains: &[NodeGain]) -> SparseSpd {
    let mut sorted: Vec<&NodeGain> = gains.iter().collect();
    sorted.sort_by_key(|g| g.bus);
    let mut triplets: Vec<(usize, usize, f64)> = (0..order).map(|c| (c, c, 0.0)).collect();
    for g in sorted {
        let w = g.columns.len();
        for a in 0..w {
            for b in 0..=a {
                let (ca, cb) = (g.columns[a], g.columns[b]);
                let (r, c) = if ca >= cb { (ca, cb) } else { (cb, ca) };
                triplets.push((r, c, g.block[a * w + b]));
            }
        }
    }
    SparseSpd::from_triplets(order, triplets).expect("columns within order")
}

/// `Σ_i H_iᵀ R_i⁻¹ r_i`, accumulated in bus order.
pub fn rhs_update(order: usize, jacs: &[NodeJacobian], weights: &[f64], residuals: &[f64]) -> Vec<f64> {
    let blocks: Vec<Vec<f64>> = jacs
        .par_iter()
        .map(|j| {
            let mut out = vec![0.0; j.columns.len()];
            for (r, k) in j.rows.clone().enumerate() {
                let wr = weights[k] * residuals[k];
                for (o, h) in out.iter_mut().zip(j.row(r)) {
                    *o += h * wr;
                }
            }
            out
        })
        .collect();
    let mut order_idx: Vec<usize> = (0..jacs.len()).collect();
    order_idx.sort_by_key(|&k| jacs[k].bus);
    let mut rhs = vec![0.0; order];
    for k in order_idx {
        for (&c, v) in jacs[k].columns.iter().zip(&blocks[k]) {
            rhs[c] += v;
        }
    }
    rhs
}

/// `[z − h(x)]ᵀ R⁻¹ [z − h(x)]` of one half.
pub fn weighted_sum(residuals: &[f64], weights: &[f64]) -> f64 {
    residuals.iter().zip(weights).map(|(r, w)| w * r * r).sum()
}
