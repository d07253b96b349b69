//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use dsse::estimator::assembly::{h_half, node_jacobian, Half, StateColumns};
use dsse::estimator::{GainSystem, MeasurementLayout};
use dsse::measurement::CoveragePlan;
use dsse::network::build_admittance;
use dsse::oracle::{self, DenseModel};
use dsse::runner::{benchmark, BenchInput};
use dsse::sparse::{cholesky, Ordering, SparseSpd};
use dsse::synthetic::{tile, TilePorts};
use dsse::{estimate, run_all, AreaNetwork, NetworkGraph, RunConfig, SolverOptions, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

/// Name, check and time limit.
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tight() -> SolverOptions {
    SolverOptions {
        eps_theta: 1e-11,
        eps_v: 1e-11,
        max_iterations: 500,
        ..SolverOptions::default()
    }
}

fn partition_14() -> Check {
    let g = ieee14();
    let spec = partition("ieee14_areas.csv");
    let (areas, _, report) = split(&g, &spec, &noise_free(&g, CoveragePlan::default()));
    let refs: Vec<_> = areas
        .iter()
        .flat_map(|a| a.reference_buses.iter().map(|p| p.bus))
        .collect();
    let msg = format!(
        "{} inter-area branches, buses 4/5 reference: {}/{}",
        report.inter_area_branch_count,
        refs.contains(&4),
        refs.contains(&5)
    );
    ensure(
        report.inter_area_branch_count == 7 && refs.contains(&4) && refs.contains(&5),
        msg,
    )
}

fn partition_118() -> Check {
    let g = ieee118();
    let spec = partition("ieee118_areas.csv");
    let (_, _, report) = split(&g, &spec, &noise_free(&g, CoveragePlan::default()));
    let msg = format!(
        "{} boundary buses, impacted ratio {:.4}",
        report.boundary_bus_count, report.impacted_ratio
    );
    ensure(
        report.boundary_bus_count == 13 && (0.10..=0.12).contains(&report.impacted_ratio),
        msg,
    )
}

fn accuracy_118() -> Check {
    let g = ieee118();
    let set = noise_free(&g, full_coverage());
    let r = estimate(&AreaNetwork::whole(&g), &set, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let (ma, mv) = mse(&r.state, &truth(&g));
    let msg = format!(
        "converged {} in {} iterations, angle MSE {ma:.3e} deg^2, vmag MSE {mv:.3e} pu^2",
        r.converged, r.iterations
    );
    ensure(r.converged && r.iterations <= 10 && ma <= 1e-6 && mv <= 1e-10, msg)
}

fn distributed_vs_monolithic(g: &NetworkGraph, part: &str) -> Result<f64, String> {
    let spec = partition(part);
    let full = noise_free(g, CoveragePlan::default());
    let cfg = RunConfig {
        worker_count: 2,
        options: tight(),
        seed: 0,
    };
    let (areas, sets, _) = split(g, &spec, &full);
    let dist = run_all(&areas, &sets, &cfg).map_err(|e| e.to_string())?;
    let (wa, ws) = whole(g, &full);
    let mono = run_all(&wa, &ws, &cfg).map_err(|e| e.to_string())?;
    if dist.buses != mono.buses {
        return Err("merged report does not cover every bus".into());
    }
    Ok(max_abs_diff(&dist.state.angle, &mono.state.angle).max(max_abs_diff(&dist.state.vmag, &mono.state.vmag)))
}

fn distributed() -> Check {
    let d14 = distributed_vs_monolithic(&ieee14(), "ieee14_areas.csv")?;
    let d118 = distributed_vs_monolithic(&ieee118(), "ieee118_areas.csv")?;
    ensure(
        d14 <= 1e-6 && d118 <= 1e-6,
        format!("max |distributed - monolithic|: 14-bus {d14:.3e}, 118-bus {d118:.3e}"),
    )
}

fn oracle_equivalence() -> Check {
    let g = ieee14();
    let set = noise_free(&g, CoveragePlan::default());
    let fd = estimate(&AreaNetwork::whole(&g), &set, &tight()).map_err(|e| e.to_string())?;
    let fn_ = oracle::full_newton_wls(&g, g.reference_angle(), &set, &tight()).map_err(|e| e.to_string())?;
    let d = fd.state.max_abs_diff(&fn_.state);
    ensure(
        fd.converged && fn_.converged && d <= 1e-6,
        format!("max |fast decoupled - full Newton| {d:.3e}"),
    )
}

fn jacobian_fd() -> Check {
    const STEP: f64 = 1e-6;
    let g = ieee14();
    let set = noise_free(&g, full_coverage());
    let adm = build_admittance(&g).map_err(|e| e.to_string())?;
    let layout = MeasurementLayout::new(&g, &set).map_err(|e| e.to_string())?;
    let n = g.bus_count();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut x = StateVector::flat(n, 0.0);
        for i in 0..n {
            x.angle[i] = rng.random_range(-0.2..0.2);
            x.vmag[i] = rng.random_range(0.9..1.1);
        }
        for half in [Half::Active, Half::Reactive] {
            let cols = match half {
                Half::Active => StateColumns::active(n, g.slack_index()),
                Half::Reactive => StateColumns::reactive(n),
            };
            let (rows, groups, _, _) = layout.half(half);
            for c in 0..cols.order() {
                let bus = cols.bus(c);
                let shifted = |d: f64| {
                    let mut y = x.clone();
                    match half {
                        Half::Active => y.angle[bus] += d,
                        Half::Reactive => y.vmag[bus] += d,
                    }
                    h_half(&adm, &y, rows)
                };
                let (hp, hm) = (shifted(STEP), shifted(-STEP));
                for group in groups {
                    let jac = node_jacobian(&adm, &x, &cols, rows, group, half);
                    for (r, row) in group.range.clone().enumerate() {
                        let fd = (hp[row] - hm[row]) / (2.0 * STEP);
                        let a = jac.columns.iter().position(|&k| k == c).map_or(0.0, |p| jac.row(r)[p]);
                        worst = worst.max((a - fd).abs() / fd.abs().max(1.0));
                    }
                }
            }
        }
    }
    ensure(
        worst <= 1e-5,
        format!("worst relative error {worst:.3e} over 100 states"),
    )
}

fn gain_identity_for(g: &NetworkGraph) -> Result<f64, String> {
    let set = noisy(g, full_coverage(), 7);
    let adm = build_admittance(g).map_err(|e| e.to_string())?;
    let layout = MeasurementLayout::new(g, &set).map_err(|e| e.to_string())?;
    let flat = StateVector::flat(g.bus_count(), g.reference_angle());
    let sys = GainSystem::assemble(g, &adm, &layout, &flat);
    let (haa, hrr) = oracle::decoupled_jacobians(g, &set, &flat).map_err(|e| e.to_string())?;
    let w = DenseModel::new(g, &set.to_vec()).map_err(|e| e.to_string())?.weights();
    let (wa, wr) = w.split_at(set.active.len());
    let mut worst: f64 = 0.0;
    for (sparse, dense) in [(&sys.g_aa, haa.weighted_gram(wa)), (&sys.g_rr, hrr.weighted_gram(wr))] {
        let n = sparse.order();
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                diff = diff.max((sparse.get(i, j) - dense.get(i, j)).abs());
                scale = scale.max(dense.get(i, j).abs());
            }
        }
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

fn gain_identity() -> Check {
    let r14 = gain_identity_for(&ieee14())?;
    let r118 = gain_identity_for(&ieee118())?;
    ensure(
        r14 <= 1e-12 && r118 <= 1e-12,
        format!("relative max deviation: 14-bus {r14:.3e}, 118-bus {r118:.3e}"),
    )
}

/// `(reconstruction / ‖A‖, solve residual / ‖b‖, schedule valid)`.
fn check_factor(a: &SparseSpd, seed: u64) -> Result<(f64, f64, bool), String> {
    let f = cholesky(a, Ordering::MinimumDegree).map_err(|e| e.to_string())?;
    let n = a.order();
    let perm = f.symbolic().permutation();
    let l = f.l_dense();
    let mut recon: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let llt: f64 = (0..=j).map(|k| l[i][k] * l[j][k]).sum();
            recon = recon.max((llt - a.get(perm[i], perm[j])).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = f.solve(&b).map_err(|e| e.to_string())?;
    let ax = a.mul_vec(&x);
    let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let resid = max_abs_diff(&ax, &b) / bnorm;

    let sched = f.symbolic().schedule();
    let mut seen = vec![0usize; n];
    for level in &sched.levels {
        for &j in level {
            seen[j] += 1;
        }
    }
    let mut valid = seen.iter().all(|&c| c == 1);
    for k in 0..n {
        for &j in f.symbolic().column_pattern(k) {
            if j != k && sched.level_of[k] >= sched.level_of[j] {
                valid = false;
            }
        }
    }
    Ok((recon / a.max_abs(), resid, valid))
}

fn sparse_solver() -> Check {
    let mut mats = Vec::new();
    for g in [ieee14(), ieee118()] {
        let set = noisy(&g, full_coverage(), 3);
        let adm = build_admittance(&g).map_err(|e| e.to_string())?;
        let layout = MeasurementLayout::new(&g, &set).map_err(|e| e.to_string())?;
        let sys = GainSystem::assemble(&g, &adm, &layout, &StateVector::flat(g.bus_count(), 0.0));
        mats.push(sys.g_aa);
        mats.push(sys.g_rr);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in 0..200 {
        let n = rng.random_range(1..=120);
        let density = rng.random_range(0.01..0.2);
        mats.push(SparseSpd::from_triplets(n, random_spd(n, density, s)).map_err(|e| e.to_string())?);
    }
    let (mut recon, mut resid, mut valid) = (0.0f64, 0.0f64, true);
    for (i, a) in mats.iter().enumerate() {
        let (r, s, v) = check_factor(a, i as u64)?;
        recon = recon.max(r);
        resid = resid.max(s);
        valid &= v;
    }
    ensure(
        recon <= 1e-12 && resid <= 1e-10 && valid,
        format!(
            "{} matrices: reconstruction {recon:.3e}, residual {resid:.3e}, schedules valid {valid}",
            mats.len()
        ),
    )
}

fn scaling() -> Check {
    let base = ieee118();
    let grid = tile(&base, 2000, 4, TilePorts::default(), 11).map_err(|e| e.to_string())?;
    let g = &grid.graph;
    let whole_set = noise_free(g, CoveragePlan::default());
    let (areas, sets, _) = split(g, &grid.partition, &whole_set);
    let input = BenchInput {
        graph: g,
        whole_set: &whole_set,
        areas: &areas,
        area_sets: &sets,
    };
    let rows = benchmark(&input, &[1, 2, 4], 5, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let median = |w: usize, mode: &str| {
        rows.iter()
            .find(|r| r.workers == w && r.mode == mode)
            .map(|r| r.median_ms)
            .unwrap_or(f64::NAN)
    };
    let part: Vec<f64> = [1, 2, 4].iter().map(|&w| median(w, "partitioned")).collect();
    let mono1 = median(1, "monolithic");
    let monotone = part.windows(2).all(|p| p[1] <= p[0]);
    ensure(
        monotone && part[0] <= mono1,
        format!(
            "{} threads available; partitioned medians {:.2}/{:.2}/{:.2} ms at 1/2/4 workers, monolithic {mono1:.2} ms at 1",
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            part[0],
            part[1],
            part[2]
        ),
    )
}

fn determinism() -> Check {
    let mut checked = 0;
    for (g, part) in [(ieee14(), "ieee14_areas.csv"), (ieee118(), "ieee118_areas.csv")] {
        let full = noisy(&g, full_coverage(), 21);
        let spec = partition(part);
        let (areas, sets, _) = split(&g, &spec, &full);
        let (wa, ws) = whole(&g, &full);
        for (areas, sets) in [(&areas, &sets), (&wa, &ws)] {
            let run = |w: usize| {
                let cfg = RunConfig {
                    worker_count: w,
                    options: SolverOptions::default(),
                    seed: 5,
                };
                run_all(areas, sets, &cfg).map_err(|e| e.to_string())
            };
            let (a, b) = (run(1)?, run(4)?);
            let bits = |s: &StateVector| -> Vec<u64> { s.angle.iter().chain(&s.vmag).map(|v| v.to_bits()).collect() };
            let same_areas = a.areas.iter().zip(&b.areas).all(|(x, y)| {
                bits(&x.state) == bits(&y.state)
                    && x.iterations == y.iterations
                    && x.objective.to_bits() == y.objective.to_bits()
                    && x.trace == y.trace
            });
            if !(same_areas && bits(&a.state) == bits(&b.state) && a.to_json().states == b.to_json().states) {
                return Err(format!(
                    "reports differ between 1 and 4 workers on {} buses",
                    g.bus_count()
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} runs bit-identical across 1 and 4 workers"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("partition fidelity, 14-bus", partition_14, Duration::from_secs(1)),
        ("partition fidelity, 118-bus", partition_118, Duration::from_secs(1)),
        ("accuracy, 118-bus noise-free", accuracy_118, Duration::from_secs(5)),
        ("distributed equals monolithic", distributed, Duration::from_secs(10)),
        ("oracle equivalence", oracle_equivalence, Duration::from_secs(5)),
        ("jacobian correctness", jacobian_fd, Duration::from_secs(10)),
        ("gain assembly identity", gain_identity, Duration::from_secs(5)),
        ("sparse solver", sparse_solver, Duration::from_secs(30)),
        ("scaling trend", scaling, Duration::from_secs(300)),
        ("determinism", determinism, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = check();
        let elapsed = t.elapsed();
        let (ok, detail) = match result {
            Ok(m) if elapsed <= *limit => (true, m),
            Ok(m) => (false, format!("{m}; over time limit")),
            Err(m) => (false, m),
        };
        failed += usize::from(!ok);
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.2}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
