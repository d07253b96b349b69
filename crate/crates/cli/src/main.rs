//! `dsse`: import cases, synthesize measurements, run distributed state
//! estimation, verify against truth and benchmark thread scaling.
//!
//! Exit status: 0 on success, 1 for invalid input, 2 for numerical failure
//! (divergence, unobservable area).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsse::estimator::{BusState, EstimateError, GainSystem, MeasurementLayout};
use dsse::measurement::{
    group_by_bus, read_measurement_csv, synthesize, write_measurement_csv, CoveragePlan, FlowCoverage, KindSigmas,
};
use dsse::network::io::{export_case, import_case, CaseFormat};
use dsse::network::{build_admittance, BusId, NetworkGraph};
use dsse::partition::{
    apply_partition, boundary_buses, localize_all, pmu_from_state, read_partition_csv, read_pmu_csv, write_pmu_csv,
    PmuRecord,
};
use dsse::runner::{benchmark, run_all, write_bench_csv, BenchInput, RunError};
use dsse::sparse::write_coordinate;
use dsse::synthetic::{tile, TilePorts};
use dsse::{oracle, AreaNetwork, MeasurementSet, PartitionSpec, RunConfig, SolverOptions, StateVector};

#[derive(Parser)]
#[command(name = "dsse", version, about = "Distributed fast-decoupled WLS state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a case to the native JSON schema.
    Import {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the power flow of a case and record the solution as its truth.
    SolveCase {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a partition and report boundary statistics.
    Partition {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        partition: PathBuf,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize measurements (and boundary PMU records) from the case truth.
    GenMeas(GenMeasArgs),
    /// Estimate the state, monolithic or per area.
    Estimate(EstimateArgs),
    /// Mean squared error of a report against the case truth.
    Verify {
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        case: CaseArgs,
    },
    /// Time monolithic and partitioned estimation over worker counts.
    Benchmark(BenchArgs),
    /// Write the gain matrices of a case and measurement set in coordinate form.
    Gain {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        measurements: PathBuf,
        /// Directory receiving `g_aa.mtx` and `g_rr.mtx`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CaseArgs {
    #[arg(long)]
    case: PathBuf,
    /// Defaults to native JSON for `.json` files, MATPOWER otherwise.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    NativeJson,
    Matpower,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowsArg {
    None,
    From,
    Both,
}

#[derive(Args)]
struct GenMeasArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Partition whose boundary buses receive PMU records.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    sigma_power: f64,
    #[arg(long, default_value_t = 0.004)]
    sigma_vmag: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_pmu_vmag: f64,
    /// Radians.
    #[arg(long, default_value_t = 0.0)]
    sigma_pmu_angle: f64,
    #[arg(long, value_enum, default_value = "from")]
    flows: FlowsArg,
    #[arg(long)]
    no_injections: bool,
    #[arg(long)]
    no_vmag: bool,
    /// Measurement CSV path.
    #[arg(long)]
    out: PathBuf,
    /// PMU CSV path (requires --partition).
    #[arg(long)]
    pmu_out: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    /// Radians.
    #[arg(long, default_value_t = 1e-4)]
    eps_theta: f64,
    /// Per-unit.
    #[arg(long, default_value_t = 1e-4)]
    eps_v: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            eps_theta: self.eps_theta,
            eps_v: self.eps_v,
            max_iterations: self.max_iter,
            ..SolverOptions::default()
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long, requires = "pmu")]
    partition: Option<PathBuf>,
    #[arg(long, requires = "partition")]
    pmu: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Case to benchmark, or the base case when tiling a synthetic grid.
    #[command(flatten)]
    case: CaseArgs,
    /// Required unless --synthetic-size is given.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Tile the case into a grid of this many buses.
    #[arg(long)]
    synthetic_size: Option<usize>,
    #[arg(long, default_value_t = 4)]
    areas: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn input(self) -> Outcome<T>;
    fn numerical(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Outcome<T> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }

    fn numerical(self) -> Outcome<T> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Outcome<()> {
    match cmd {
        Command::Import { case, out } => {
            let g = load_case(&case)?;
            export_case(&g, &out).input()?;
            println!(
                "{} buses, {} branches, slack {}",
                g.bus_count(),
                g.branches().len(),
                g.slack_bus()
            );
            Ok(())
        }
        Command::SolveCase { case, out } => solve_case(&case, &out),
        Command::Partition { case, partition, out } => cmd_partition(&case, &partition, out.as_deref()),
        Command::GenMeas(args) => gen_meas(&args),
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Verify { report, case } => verify(&report, &case),
        Command::Benchmark(args) => cmd_benchmark(&args),
        Command::Gain {
            case,
            measurements,
            out,
        } => gain(&case, &measurements, &out),
    }
}

fn load_case(args: &CaseArgs) -> Outcome<NetworkGraph> {
    let format = args.format.map(|f| match f {
        FormatArg::NativeJson => CaseFormat::NativeJson,
        FormatArg::Matpower => CaseFormat::Matpower,
    });
    import_case(&args.case, format)
        .with_context(|| format!("reading case {}", args.case.display()))
        .input()
}

fn open(path: &Path) -> Outcome<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
        .input()
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .input()
}

fn load_partition(path: &Path) -> Outcome<PartitionSpec> {
    read_partition_csv(open(path)?)
        .with_context(|| format!("reading partition {}", path.display()))
        .input()
}

/// Recorded truth, or a power-flow solution when the case has none.
fn truth_of(g: &NetworkGraph) -> Outcome<StateVector> {
    match g.true_state() {
        Some(s) => Ok(s),
        None => oracle::newton_powerflow(g).context("power flow").numerical(),
    }
}

fn solve_case(case: &CaseArgs, out: &Path) -> Outcome<()> {
    let g = load_case(case)?;
    let s = oracle::newton_powerflow(&g).context("power flow").numerical()?;
    if let Some(recorded) = g.true_state() {
        println!(
            "max deviation from recorded solution: {:.3e}",
            s.max_abs_diff(&recorded)
        );
    }
    export_case(&g.with_true_state(&s), out).input()?;
    println!("solved {} buses", g.bus_count());
    Ok(())
}

fn cmd_partition(case: &CaseArgs, partition: &Path, out: Option<&Path>) -> Outcome<()> {
    let g = load_case(case)?;
    let spec = load_partition(partition)?;
    let state = truth_of(&g).unwrap_or_else(|_| StateVector::flat(g.bus_count(), 0.0));
    let bnd = boundary_buses(&g, &spec);
    let pmu = pmu_from_state(&g, &state, bnd.iter().copied(), 0.0, 0.0, 0);
    let (areas, report) = apply_partition(&g, &spec, &pmu).input()?;
    println!("areas: {}", areas.len());
    println!("inter-area branches: {}", report.inter_area_branch_count);
    println!("boundary buses: {} ({:?})", report.boundary_bus_count, bnd);
    println!("impacted ratio: {:.4}", report.impacted_ratio);
    for a in &areas {
        println!(
            "area {}: {} buses, local slack {}, reference buses {:?}",
            a.area_id,
            a.graph.bus_count(),
            a.local_slack,
            a.reference_buses.iter().map(|p| p.bus).collect::<Vec<_>>()
        );
    }
    if let Some(path) = out {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &report).input()?;
        w.flush().input()?;
    }
    Ok(())
}

fn gen_meas(a: &GenMeasArgs) -> Outcome<()> {
    let g = load_case(&a.case)?;
    let truth = truth_of(&g)?;
    let plan = CoveragePlan {
        injections: !a.no_injections,
        vmag: !a.no_vmag,
        flows: match a.flows {
            FlowsArg::None => FlowCoverage::None,
            FlowsArg::From => FlowCoverage::FromEnd,
            FlowsArg::Both => FlowCoverage::BothEnds,
        },
    };
    let sigmas = KindSigmas {
        power: a.sigma_power,
        vmag: a.sigma_vmag,
        pmu_vmag: a.sigma_pmu_vmag,
        pmu_angle: a.sigma_pmu_angle,
    };
    for (name, s) in [
        ("--sigma-power", a.sigma_power),
        ("--sigma-vmag", a.sigma_vmag),
        ("--sigma-pmu-vmag", a.sigma_pmu_vmag),
        ("--sigma-pmu-angle", a.sigma_pmu_angle),
    ] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(anyhow!("{name} must be a non-negative number")).input();
        }
    }
    let set = synthesize(&g, &truth, plan, a.seed, &sigmas).input()?;
    let mut w = create(&a.out)?;
    write_measurement_csv(&mut w, set.iter()).input()?;
    w.flush().input()?;
    println!("{} measurements written to {}", set.m_total(), a.out.display());
    match (&a.partition, &a.pmu_out) {
        (Some(p), Some(out)) => {
            let spec = load_partition(p)?;
            spec.check(&g).input()?;
            let bnd = boundary_buses(&g, &spec);
            let pmu = pmu_from_state(
                &g,
                &truth,
                bnd.iter().copied(),
                a.sigma_pmu_vmag,
                a.sigma_pmu_angle,
                a.seed.wrapping_add(1),
            );
            let mut w = create(out)?;
            write_pmu_csv(&mut w, pmu.values()).input()?;
            w.flush().input()?;
            println!("{} PMU records written to {}", pmu.len(), out.display());
        }
        (None, Some(_)) => return Err(anyhow!("--pmu-out needs --partition")).input(),
        _ => {}
    }
    Ok(())
}

fn run_failure(e: RunError) -> Failure {
    let numerical = match &e {
        RunError::NotConverged { .. } => true,
        RunError::AreaFailed { source, .. } => {
            matches!(source, EstimateError::Unobservable { .. } | EstimateError::Solver(_))
        }
        _ => false,
    };
    Failure {
        code: if numerical { 2 } else { 1 },
        error: e.into(),
    }
}

fn prepare(
    g: &NetworkGraph,
    raw: Vec<dsse::Measurement>,
    partition: Option<(&Path, &Path)>,
) -> Outcome<(Vec<AreaNetwork>, Vec<MeasurementSet>)> {
    match partition {
        None => {
            let set = group_by_bus(g, raw).input()?;
            Ok((vec![AreaNetwork::whole(g)], vec![set]))
        }
        Some((part, pmu_path)) => {
            let spec = load_partition(part)?;
            let pmu: BTreeMap<BusId, PmuRecord> = read_pmu_csv(open(pmu_path)?)
                .with_context(|| format!("reading PMU file {}", pmu_path.display()))
                .input()?;
            let (areas, _) = apply_partition(g, &spec, &pmu).input()?;
            let sets = localize_all(&areas, &raw, &KindSigmas::default()).input()?;
            Ok((areas, sets))
        }
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Outcome<()> {
    let g = load_case(&a.case)?;
    let raw = read_measurement_csv(open(&a.measurements)?)
        .with_context(|| format!("reading measurements {}", a.measurements.display()))
        .input()?;
    let part = a.partition.as_deref().zip(a.pmu.as_deref());
    let (areas, sets) = prepare(&g, raw, part)?;
    let opts = a.solver.options();
    opts.validate().input()?;
    let cfg = RunConfig {
        worker_count: a.workers,
        options: opts,
        seed: a.seed,
    };
    let report = run_all(&areas, &sets, &cfg).map_err(run_failure)?;
    for r in &report.areas {
        println!(
            "area {}: converged={} iterations={} objective={:.6e}",
            r.area_id, r.converged, r.iterations, r.objective
        );
    }
    println!("wall time: {:.3} ms", report.timings.wall_ms);
    let mut w = create(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &report.to_json()).input()?;
    w.flush().input()?;
    Ok(())
}

/// `(angle MSE in deg², vmag MSE in pu²)` of `states` against `truth`.
fn mse(g: &NetworkGraph, truth: &StateVector, states: &[BusState]) -> anyhow::Result<(f64, f64)> {
    let mut by_bus: BTreeMap<BusId, &BusState> = BTreeMap::new();
    for s in states {
        if by_bus.insert(s.bus, s).is_some() {
            bail!("bus {} appears twice in the report", s.bus);
        }
    }
    let (mut ea, mut ev) = (0.0, 0.0);
    for (i, id) in g.bus_ids().enumerate() {
        let s = by_bus
            .get(&id)
            .ok_or_else(|| anyhow!("report has no state for bus {id}"))?;
        ea += (s.angle_deg - truth.angle[i].to_degrees()).powi(2);
        ev += (s.vmag_pu - truth.vmag[i]).powi(2);
    }
    let n = g.bus_count() as f64;
    Ok((ea / n, ev / n))
}

fn verify(report: &Path, case: &CaseArgs) -> Outcome<()> {
    let g = load_case(case)?;
    let truth = g
        .true_state()
        .ok_or_else(|| anyhow!("case {} carries no true state", case.case.display()))
        .input()?;
    #[derive(serde::Deserialize)]
    struct States {
        states: Vec<BusState>,
    }
    let r: States = serde_json::from_reader(open(report)?)
        .with_context(|| format!("reading report {}", report.display()))
        .input()?;
    let (ma, mv) = mse(&g, &truth, &r.states).input()?;
    println!("angle MSE (deg^2): {ma:.6e}");
    println!("vmag MSE (pu^2): {mv:.6e}");
    Ok(())
}

fn cmd_benchmark(a: &BenchArgs) -> Outcome<()> {
    let base = load_case(&a.case)?;
    let (g, spec, truth) = match a.synthetic_size {
        Some(size) => {
            let grid = tile(&base, size, a.areas, TilePorts::default(), a.seed).input()?;
            (grid.graph, grid.partition, grid.truth)
        }
        None => {
            let p = a
                .partition
                .as_deref()
                .ok_or_else(|| anyhow!("--partition is required without --synthetic-size"))
                .input()?;
            let spec = load_partition(p)?;
            let truth = truth_of(&base)?;
            (base, spec, truth)
        }
    };
    if a.workers.is_empty() || a.workers.contains(&0) {
        return Err(anyhow!("--workers must list counts of at least 1")).input();
    }
    let opts = a.solver.options();
    opts.validate().input()?;
    let whole = synthesize(&g, &truth, CoveragePlan::default(), a.seed, &KindSigmas::noise_free()).input()?;
    let pmu = pmu_from_state(&g, &truth, boundary_buses(&g, &spec), 0.0, 0.0, 0);
    let (areas, _) = apply_partition(&g, &spec, &pmu).input()?;
    let sets = localize_all(&areas, &whole.to_vec(), &KindSigmas::default()).input()?;
    let input = BenchInput {
        graph: &g,
        whole_set: &whole,
        areas: &areas,
        area_sets: &sets,
    };
    let rows = benchmark(&input, &a.workers, a.runs, &opts).map_err(run_failure)?;
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            write_bench_csv(&mut w, &rows).input()?;
            w.flush().input()?;
        }
        None => write_bench_csv(std::io::stdout().lock(), &rows).input()?,
    }
    Ok(())
}

fn gain(case: &CaseArgs, measurements: &Path, out: &Path) -> Outcome<()> {
    let g = load_case(case)?;
    let raw = read_measurement_csv(open(measurements)?).input()?;
    let set = group_by_bus(&g, raw).input()?;
    let layout = MeasurementLayout::new(&g, &set).input()?;
    let adm = build_admittance(&g).input()?;
    let sys = GainSystem::assemble(
        &g,
        &adm,
        &layout,
        &StateVector::flat(g.bus_count(), g.reference_angle()),
    );
    std::fs::create_dir_all(out).input()?;
    std::fs::write(out.join("g_aa.mtx"), write_coordinate(&sys.g_aa)).input()?;
    std::fs::write(out.join("g_rr.mtx"), write_coordinate(&sys.g_rr)).input()?;
    println!("G_AA order {}, G_RR order {}", sys.g_aa.order(), sys.g_rr.order());
    Ok(())
}
