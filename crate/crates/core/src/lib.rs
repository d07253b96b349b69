//! Distributed weighted-least-squares state estimation for power grids.
//!
//! The crate estimates bus voltage magnitudes and angles with the fast
//! decoupled WLS method. Jacobian rows, gain contributions and right-hand
//! sides are formed bus by bus from one-hop data and summed into sparse
//! normal equations. Those are factorized once with a level-scheduled sparse
//! Cholesky solver.
//!
//! A grid can also be cut into areas along a supplied bus-to-area assignment.
//! Terminals of the cut branches become PMU reference buses, the cut flows are
//! replaced by equivalent injections, and each area is then estimated on its
//! own, in parallel, without exchanging anything with its neighbours.
//!
//! Module map:
//!
//! - [`network`]: buses, branches, admittance, case-file readers/writers
//! - [`measurement`]: measurement model, bus-grouped layout, synthesis, CSV
//! - [`partition`]: area decomposition with PMU reference buses
//! - [`estimator`]: node-based assembly and the fast decoupled iteration
//! - [`sparse`]: ordering, elimination tree, level schedule, Cholesky
//! - [`runner`]: parallel per-area execution, merging, benchmarking
//! - [`oracle`]: dense reference engines used to verify the fast path
//! - [`synthetic`]: large test grids tiled from a base case

pub mod estimator;
pub mod measurement;
pub mod network;
pub mod oracle;
pub mod partition;
pub mod physics;
pub mod runner;
pub mod sparse;
pub mod state;
pub mod synthetic;

pub use estimator::{estimate, EstimateError, EstimationReport, SolverOptions};
pub use measurement::{Measurement, MeasurementKind, MeasurementSet};
pub use network::{Branch, Bus, BusId, BusKind, NetworkGraph};
pub use partition::{apply_partition, AreaNetwork, PartitionSpec, PmuRecord};
pub use runner::{run_all, GlobalReport, RunConfig};
pub use state::StateVector;
