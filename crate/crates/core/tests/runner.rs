mod common;

use common::*;
use dsse::measurement::KindSigmas;
use dsse::partition::{apply_partition, boundary_buses, localize_all, pmu_from_state};
use dsse::runner::{benchmark, merge_states, write_bench_csv, BenchInput, RunError};
use dsse::{estimate, run_all, GlobalReport, RunConfig, SolverOptions};

fn cfg(workers: usize) -> RunConfig {
    RunConfig {
        worker_count: workers,
        options: SolverOptions {
            eps_theta: 1e-10,
            eps_v: 1e-10,
            max_iterations: 500,
            ..SolverOptions::default()
        },
        seed: 0,
    }
}

fn strip(r: &GlobalReport) -> GlobalReport {
    GlobalReport {
        timings: Default::default(),
        ..r.clone()
    }
}

#[test]
fn worker_count_does_not_change_results() {
    for (g, part) in [(ieee14(), "ieee14_areas.csv"), (ieee118(), "ieee118_areas.csv")] {
        let (areas, sets, _) = split(&g, &partition(part), &noisy(&g, full_coverage(), 21));
        let one = run_all(&areas, &sets, &cfg(1)).unwrap();
        let four = run_all(&areas, &sets, &cfg(4)).unwrap();
        assert_eq!(strip(&one), strip(&four));
    }
}

#[test]
fn single_area_equals_direct_estimate() {
    let g = ieee118();
    let (areas, sets) = whole(&g, &noisy(&g, full_coverage(), 22));
    let run = run_all(&areas, &sets, &cfg(2)).unwrap();
    let direct = estimate(&areas[0], &sets[0], &cfg(1).options).unwrap();
    assert_eq!(run.areas, vec![direct.clone()]);
    assert_eq!(run.state, direct.state);
    assert_eq!(run.buses, g.bus_ids().collect::<Vec<_>>());
    assert_eq!(run.max_cross_check_residual, 0.0);
}

#[test]
fn noise_free_partition_recovers_truth() {
    for (g, part) in [(ieee14(), "ieee14_areas.csv"), (ieee118(), "ieee118_areas.csv")] {
        let (areas, sets, _) = split(&g, &partition(part), &noise_free(&g, full_coverage()));
        let r = run_all(&areas, &sets, &cfg(2)).unwrap();
        assert!(r.state.max_abs_diff(&truth(&g)) < 1e-8);
        assert!(r.max_cross_check_residual < 1e-8);
    }
}

#[test]
fn partitioned_close_to_monolithic_on_noisy_data() {
    let g = ieee14();
    let whole_set = noisy(&g, full_coverage(), 23);
    let (areas, sets, _) = split(&g, &partition("ieee14_areas.csv"), &whole_set);
    let part = run_all(&areas, &sets, &cfg(1)).unwrap();
    let (wa, ws) = whole(&g, &whole_set);
    let mono = run_all(&wa, &ws, &cfg(1)).unwrap();
    let (ea, ev) = mse(&part.state, &truth(&g));
    let (ma, mv) = mse(&mono.state, &truth(&g));
    // both stay in the noise band of the measurements
    assert!(ea < 1.0 && ma < 1.0, "{ea} {ma}");
    assert!(ev < 1e-4 && mv < 1e-4, "{ev} {mv}");
}

#[test]
fn merge_ignores_report_order() {
    let g = ieee118();
    let (areas, sets, _) = split(&g, &partition("ieee118_areas.csv"), &noisy(&g, full_coverage(), 24));
    let r = run_all(&areas, &sets, &cfg(1)).unwrap();
    let mut reversed = r.areas.clone();
    reversed.reverse();
    assert_eq!(
        merge_states(&reversed, &areas).unwrap(),
        (r.buses.clone(), r.state.clone())
    );
    assert_eq!(
        merge_states(&r.areas, &areas).unwrap(),
        merge_states(&r.areas, &areas).unwrap()
    );
    assert!(matches!(
        merge_states(&r.areas[1..], &areas),
        Err(RunError::MissingArea(_))
    ));
}

#[test]
fn merged_slack_angles_sit_at_reference() {
    let g = ieee14();
    let spec = partition("ieee14_areas.csv");
    let (areas, sets, _) = split(&g, &spec, &noisy(&g, full_coverage(), 25));
    let r = run_all(&areas, &sets, &cfg(1)).unwrap();
    for a in &areas {
        let (angle, _) = r.bus_state(a.local_slack).unwrap();
        assert!((angle - a.reference_angle).abs() < 1e-15);
    }
    assert_eq!(r.bus_state(999), None);
    let json = r.to_json();
    assert_eq!(json.states.len(), 14);
    assert_eq!(json.areas.len(), 4);
}

#[test]
fn noisy_pmus_show_up_in_cross_check() {
    let g = ieee14();
    let spec = partition("ieee14_areas.csv");
    let pmu = pmu_from_state(&g, &truth(&g), boundary_buses(&g, &spec), 1e-3, 1e-3, 5);
    let (areas, _) = apply_partition(&g, &spec, &pmu).unwrap();
    let sets = localize_all(
        &areas,
        &noise_free(&g, full_coverage()).to_vec(),
        &KindSigmas::default(),
    )
    .unwrap();
    let r = run_all(&areas, &sets, &cfg(1)).unwrap();
    assert!(r.max_cross_check_residual > 1e-6 && r.max_cross_check_residual < 1e-2);
}

#[test]
fn run_errors() {
    let g = ieee14();
    let (areas, sets, _) = split(&g, &partition("ieee14_areas.csv"), &noisy(&g, full_coverage(), 26));
    assert!(matches!(
        run_all(&areas, &sets[1..], &cfg(1)),
        Err(RunError::SetCount { areas: 4, sets: 3 })
    ));
    assert!(matches!(run_all(&areas, &sets, &cfg(0)), Err(RunError::NoWorkers)));
    let mut capped = cfg(1);
    capped.options.max_iterations = 1;
    assert!(matches!(
        run_all(&areas, &sets, &capped),
        Err(RunError::NotConverged { .. })
    ));
    let mut empty = sets.clone();
    empty[2] = dsse::measurement::group_by_bus(&areas[2].graph, Vec::new()).unwrap();
    assert!(matches!(
        run_all(&areas, &empty, &cfg(1)),
        Err(RunError::AreaFailed { area: 2, .. })
    ));
}

#[test]
fn benchmark_rows_and_csv() {
    let g = ieee14();
    let whole_set = noisy(&g, full_coverage(), 27);
    let (areas, sets, _) = split(&g, &partition("ieee14_areas.csv"), &whole_set);
    let input = BenchInput {
        graph: &g,
        whole_set: &whole_set,
        areas: &areas,
        area_sets: &sets,
    };
    let rows = benchmark(&input, &[1, 2], 5, &SolverOptions::default()).unwrap();
    assert_eq!(rows.len(), 4);
    let modes: Vec<_> = rows.iter().map(|r| (r.workers, r.mode.as_str())).collect();
    assert_eq!(
        modes,
        [
            (1, "monolithic"),
            (1, "partitioned"),
            (2, "monolithic"),
            (2, "partitioned")
        ]
    );
    for r in &rows {
        assert!(r.p10_ms <= r.median_ms && r.median_ms <= r.p90_ms);
    }
    assert_eq!(rows[1].iterations.split('/').count(), 4);
    let mut buf = Vec::new();
    write_bench_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "workers,mode,median_ms,p10_ms,p90_ms,iterations"
    );
    assert_eq!(text.lines().count(), 5);

    let bad = BenchInput {
        area_sets: &sets[..2],
        ..input
    };
    assert!(matches!(
        benchmark(&bad, &[1], 5, &SolverOptions::default()),
        Err(RunError::SetCount { .. })
    ));
}
