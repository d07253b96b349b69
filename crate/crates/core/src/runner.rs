//! Parallel execution of independent areas.
//!
//! Areas are scheduled on a fixed-size worker pool. Node-level work inside an
//! area runs on the same pool. Areas share only immutable inputs and return
//! their reports through the join, so nothing crosses between areas while
//! they run.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::report::bus_states;
use crate::estimator::{estimate_graph, estimate_timed, BusState, EstimateError, PhaseTimes, ReportJson};
use crate::network::{BusId, NetworkGraph};
use crate::partition::AreaNetwork;
use crate::{EstimationReport, MeasurementSet, SolverOptions, StateVector};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{areas} areas but {sets} measurement sets")]
    SetCount { areas: usize, sets: usize },
    #[error("area {area} failed: {source}")]
    AreaFailed {
        area: usize,
        #[source]
        source: EstimateError,
    },
    #[error("area {area} did not converge in {iterations} iterations")]
    NotConverged { area: usize, iterations: usize },
    #[error("no report for area {0}")]
    MissingArea(usize),
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub worker_count: usize,
    pub options: SolverOptions,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            worker_count: 1,
            options: SolverOptions::default(),
            seed: 0,
        }
    }
}

/// Milliseconds per phase. Phase entries are summed over areas; `wall_ms`
/// is the elapsed time of the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub assembly_ms: f64,
    pub factorization_ms: f64,
    pub iteration_ms: f64,
    pub wall_ms: f64,
}

impl Timings {
    fn new(phases: PhaseTimes, wall: Duration) -> Self {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        Self {
            assembly_ms: ms(phases.assembly),
            factorization_ms: ms(phases.factorization),
            iteration_ms: ms(phases.iteration),
            wall_ms: ms(wall),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalReport {
    pub areas: Vec<EstimationReport>,
    /// Bus ids of the merged state, ascending.
    pub buses: Vec<BusId>,
    pub state: StateVector,
    pub timings: Timings,
    /// Largest deviation of an estimated reference-bus phasor from its PMU
    /// record (radians or per-unit).
    pub max_cross_check_residual: f64,
}

/// File form of a [`GlobalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalReportJson {
    pub areas: Vec<ReportJson>,
    pub states: Vec<BusState>,
    pub timings: Timings,
    pub max_cross_check_residual: f64,
}

impl GlobalReport {
    pub fn to_json(&self) -> GlobalReportJson {
        GlobalReportJson {
            areas: self.areas.iter().map(ReportJson::from).collect(),
            states: bus_states(&self.buses, &self.state.angle, &self.state.vmag),
            timings: self.timings,
            max_cross_check_residual: self.max_cross_check_residual,
        }
    }

    /// State of one bus: `(angle, vmag)`.
    pub fn bus_state(&self, bus: BusId) -> Option<(f64, f64)> {
        let i = self.buses.binary_search(&bus).ok()?;
        Some((self.state.angle[i], self.state.vmag[i]))
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, RunError> {
    if workers == 0 {
        return Err(RunError::NoWorkers);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))
}

/// Estimates every area on a pool of `cfg.worker_count` threads and merges
/// the results.
pub fn run_all(areas: &[AreaNetwork], sets: &[MeasurementSet], cfg: &RunConfig) -> Result<GlobalReport, RunError> {
    if areas.len() != sets.len() {
        return Err(RunError::SetCount {
            areas: areas.len(),
            sets: sets.len(),
        });
    }
    run_on(&pool(cfg.worker_count)?, areas, sets, &cfg.options)
}

fn run_on(
    pool: &rayon::ThreadPool,
    areas: &[AreaNetwork],
    sets: &[MeasurementSet],
    options: &SolverOptions,
) -> Result<GlobalReport, RunError> {
    let start = Instant::now();
    let results: Vec<Result<(EstimationReport, PhaseTimes), EstimateError>> = pool.install(|| {
        areas
            .par_iter()
            .zip(sets.par_iter())
            .map(|(a, s)| estimate_timed(a, s, options))
            .collect()
    });
    let wall = start.elapsed();
    let mut reports = Vec::with_capacity(areas.len());
    let mut phases = PhaseTimes::default();
    for (area, r) in areas.iter().zip(results) {
        let (report, t) = r.map_err(|source| RunError::AreaFailed {
            area: area.area_id,
            source,
        })?;
        if !report.converged {
            return Err(RunError::NotConverged {
                area: area.area_id,
                iterations: report.iterations,
            });
        }
        phases += t;
        reports.push(report);
    }
    let (buses, state) = merge_states(&reports, areas)?;
    let max_cross_check_residual = cross_check(&reports, areas);
    Ok(GlobalReport {
        areas: reports,
        buses,
        state,
        timings: Timings::new(phases, wall),
        max_cross_check_residual,
    })
}

fn cross_check(reports: &[EstimationReport], areas: &[AreaNetwork]) -> f64 {
    let mut worst = 0.0f64;
    for (r, a) in reports.iter().zip(areas) {
        for p in &a.reference_buses {
            if let Ok(i) = r.buses.binary_search(&p.bus) {
                worst = worst.max((r.state.vmag[i] - p.vmag).abs());
                worst = worst.max((r.state.angle[i] - p.angle).abs());
            }
        }
    }
    worst
}

/// Places every area's state into one global vector, shifting each area's
/// angles so that its local slack sits at the area's reference angle.
pub fn merge_states(
    reports: &[EstimationReport],
    areas: &[AreaNetwork],
) -> Result<(Vec<BusId>, StateVector), RunError> {
    let by_id: BTreeMap<usize, &EstimationReport> = reports.iter().map(|r| (r.area_id, r)).collect();
    let mut merged: BTreeMap<BusId, (f64, f64)> = BTreeMap::new();
    for area in areas {
        let r = by_id.get(&area.area_id).ok_or(RunError::MissingArea(area.area_id))?;
        let slack = r
            .buses
            .binary_search(&area.local_slack)
            .map_err(|_| RunError::MissingArea(area.area_id))?;
        let shift = area.reference_angle - r.state.angle[slack];
        for (k, &bus) in r.buses.iter().enumerate() {
            merged.insert(bus, (r.state.angle[k] + shift, r.state.vmag[k]));
        }
    }
    let buses: Vec<BusId> = merged.keys().copied().collect();
    let (angle, vmag) = merged.values().copied().unzip();
    Ok((buses, StateVector { angle, vmag }))
}

/// One row of the scaling table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub workers: usize,
    pub mode: String,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    /// Iterations per area, `/`-separated.
    pub iterations: String,
}

/// Inputs for both benchmark modes.
pub struct BenchInput<'a> {
    pub graph: &'a NetworkGraph,
    pub whole_set: &'a MeasurementSet,
    pub areas: &'a [AreaNetwork],
    pub area_sets: &'a [MeasurementSet],
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(workers: usize, mode: &str, mut times: Vec<f64>, iterations: String) -> BenchRow {
    times.sort_by(f64::total_cmp);
    BenchRow {
        workers,
        mode: mode.into(),
        median_ms: percentile(&times, 0.5),
        p10_ms: percentile(&times, 0.1),
        p90_ms: percentile(&times, 0.9),
        iterations,
    }
}

/// Times monolithic and partitioned estimation for each worker count.
///
/// Each configuration gets one warm-up run followed by `runs` timed runs
/// (at least 5).
pub fn benchmark(
    input: &BenchInput<'_>,
    workers: &[usize],
    runs: usize,
    opts: &SolverOptions,
) -> Result<Vec<BenchRow>, RunError> {
    let runs = runs.max(5);
    let mut rows = Vec::new();
    for &w in workers {
        let pool = pool(w)?;
        let whole = AreaNetwork::whole(input.graph);
        let mono = || -> Result<(f64, usize), RunError> {
            let t = Instant::now();
            let (r, _) = pool
                .install(|| estimate_graph(&whole.graph, whole.reference_angle, 0, input.whole_set, opts))
                .map_err(|source| RunError::AreaFailed { area: 0, source })?;
            Ok((t.elapsed().as_secs_f64() * 1e3, r.iterations))
        };
        mono()?;
        let mut times = Vec::with_capacity(runs);
        let mut iters = 0;
        for _ in 0..runs {
            let (ms, it) = mono()?;
            times.push(ms);
            iters = it;
        }
        rows.push(summarize(w, "monolithic", times, iters.to_string()));

        if input.areas.len() != input.area_sets.len() {
            return Err(RunError::SetCount {
                areas: input.areas.len(),
                sets: input.area_sets.len(),
            });
        }
        let part = || -> Result<(f64, GlobalReport), RunError> {
            let t = Instant::now();
            let r = run_on(&pool, input.areas, input.area_sets, opts)?;
            Ok((t.elapsed().as_secs_f64() * 1e3, r))
        };
        part()?;
        let mut times = Vec::with_capacity(runs);
        let mut iters = String::new();
        for _ in 0..runs {
            let (ms, r) = part()?;
            times.push(ms);
            iters = r
                .areas
                .iter()
                .map(|a| a.iterations.to_string())
                .collect::<Vec<_>>()
                .join("/");
        }
        rows.push(summarize(w, "partitioned", times, iters));
    }
    Ok(rows)
}

pub fn write_bench_csv(writer: impl std::io::Write, rows: &[BenchRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
