#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use common::*;
use dsse::estimator::{h_evaluate, MeasurementLayout};
use dsse::measurement::{CoveragePlan, FlowCoverage, KindSigmas};
use dsse::network::build_admittance;
use dsse::oracle::newton_powerflow;
use dsse::partition::{
    apply_partition, boundary_buses, boundary_report, equivalent_injection, localize_measurements, pmu_from_state,
    read_pmu_csv, write_pmu_csv, PartitionError,
};
use dsse::physics::{value, Located};
use dsse::{BusId, MeasurementKind, NetworkGraph, PartitionSpec, PmuRecord, StateVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Areas grown breadth-first from `k` random seeds; each area is connected.
fn grown_partition(g: &NetworkGraph, k: usize, seed: u64) -> PartitionSpec {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = g.bus_count();
    let k = k.min(n);
    let mut owner = vec![usize::MAX; n];
    let mut queues: Vec<VecDeque<usize>> = Vec::new();
    let mut starts = BTreeSet::new();
    while starts.len() < k {
        starts.insert(rng.random_range(0..n));
    }
    for (a, &s) in starts.iter().enumerate() {
        owner[s] = a;
        queues.push(VecDeque::from([s]));
    }
    while queues.iter().any(|q| !q.is_empty()) {
        for a in 0..k {
            if let Some(i) = queues[a].pop_front() {
                let id = g.buses()[i].id;
                for &br in g.incident(i) {
                    let j = g.index_of(g.branches()[br].other_end(id)).unwrap();
                    if owner[j] == usize::MAX {
                        owner[j] = a;
                        queues[a].push_back(j);
                    }
                }
            }
        }
    }
    PartitionSpec::new(g.buses().iter().zip(&owner).map(|(b, &a)| (b.id, a))).unwrap()
}

fn four_area_14() -> (NetworkGraph, PartitionSpec) {
    (ieee14(), partition("ieee14_areas.csv"))
}

#[test]
fn four_area_cut_branches_and_references() {
    let (g, spec) = four_area_14();
    let (areas, report) = apply_partition(&g, &spec, &exact_pmus(&g, &spec)).unwrap();
    assert_eq!(report.inter_area_branch_count, 7);
    let cut: Vec<_> = g
        .branches()
        .iter()
        .filter(|b| spec.area_of(b.from_bus) != spec.area_of(b.to_bus))
        .collect();
    assert_eq!(cut.len(), 7);
    let endpoints: BTreeSet<BusId> = cut.iter().flat_map(|b| [b.from_bus, b.to_bus]).collect();
    assert_eq!(report.boundary_bus_count, endpoints.len());
    let refs: BTreeSet<BusId> = areas
        .iter()
        .flat_map(|a| a.reference_buses.iter().map(|p| p.bus))
        .collect();
    assert_eq!(refs, endpoints);
    assert!(refs.contains(&4) && refs.contains(&5));
    assert_eq!(boundary_buses(&g, &spec), endpoints.into_iter().collect::<Vec<_>>());
}

#[test]
fn three_area_boundary_count() {
    let g = ieee118();
    let spec = partition("ieee118_areas.csv");
    let (_, report) = apply_partition(&g, &spec, &exact_pmus(&g, &spec)).unwrap();
    assert_eq!(report.boundary_bus_count, 13);
    assert!((report.impacted_ratio - 13.0 / 118.0).abs() < 1e-15);
}

#[test]
fn local_slack_rule() {
    let (g, spec) = four_area_14();
    let (areas, _) = apply_partition(&g, &spec, &exact_pmus(&g, &spec)).unwrap();
    for a in &areas {
        if a.graph.index_of(g.slack_bus()).is_some() {
            assert_eq!(a.local_slack, g.slack_bus());
            assert_eq!(a.reference_angle, g.reference_angle());
        } else {
            assert_eq!(a.local_slack, a.reference_buses[0].bus);
            assert_eq!(a.reference_angle, a.reference_buses[0].angle);
        }
        assert_eq!(a.graph.slack_bus(), a.local_slack);
    }
}

#[test]
fn missing_pmu_names_the_bus() {
    let (g, spec) = four_area_14();
    let mut pmu = exact_pmus(&g, &spec);
    pmu.remove(&4);
    match apply_partition(&g, &spec, &pmu) {
        Err(PartitionError::MissingPmu(4)) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn disconnected_area_rejected() {
    let (g, _) = four_area_14();
    // buses 1 and 14 share an area but nothing joins them inside it
    let pairs = g.bus_ids().map(|b| (b, usize::from(b != 1 && b != 14)));
    let spec = PartitionSpec::new(pairs).unwrap();
    let pmu = exact_pmus(&g, &spec);
    assert!(matches!(
        apply_partition(&g, &spec, &pmu),
        Err(PartitionError::DisconnectedArea { .. })
    ));
}

#[test]
fn single_area_report() {
    let g = ieee14();
    let (areas, report) = apply_partition(&g, &PartitionSpec::single(&g), &BTreeMap::new()).unwrap();
    assert_eq!(report.boundary_bus_count, 0);
    assert_eq!(report.impacted_ratio, 0.0);
    assert_eq!(boundary_report(&areas, 14), report);
}

#[test]
fn injection_of_equal_phasors_is_zero() {
    let br = dsse::network::Branch::line(1, 2, 0.02, 0.1, 0.0);
    let p = PmuRecord::exact(1, 1.03, 0.2);
    let q = PmuRecord::exact(2, 1.03, 0.2);
    assert!(equivalent_injection(&br, &p, &q).unwrap().norm() < 1e-15);
}

#[test]
fn injection_equals_solved_branch_flow() {
    use dsse::network::{Branch, Bus, BusKind};
    let mut load = Bus::new(2, BusKind::Load);
    load.p_inj = -0.6;
    load.q_inj = -0.2;
    let br = Branch::line(1, 2, 0.02, 0.1, 0.04);
    let g = NetworkGraph::new(vec![Bus::new(1, BusKind::Slack), load], vec![br.clone()], 1, 100.0).unwrap();
    let s = newton_powerflow(&g).unwrap();
    let rec = |i: usize| PmuRecord::exact(g.buses()[i].id, s.vmag[i], s.angle[i]);
    let inj = equivalent_injection(&br, &rec(0), &rec(1)).unwrap();
    let adm = build_admittance(&g).unwrap();
    let at = |kind| Located {
        kind,
        at: 0,
        to: Some(1),
    };
    assert!((inj.re - value(&adm, &s, &at(MeasurementKind::PFlow))).abs() < 1e-12);
    assert!((inj.im - value(&adm, &s, &at(MeasurementKind::QFlow))).abs() < 1e-12);
    // the remote end sees the load
    let back = equivalent_injection(&br, &rec(1), &rec(0)).unwrap();
    assert!((back.re + 0.6).abs() < 1e-9 && (back.im + 0.2).abs() < 1e-9);
}

#[test]
fn lossless_line_flows_are_opposite() {
    let br = dsse::network::Branch::line(1, 2, 0.0, 0.1, 0.05);
    let p = PmuRecord::exact(1, 1.02, 0.1);
    let q = PmuRecord::exact(2, 0.99, -0.05);
    let a = equivalent_injection(&br, &p, &q).unwrap();
    let b = equivalent_injection(&br, &q, &p).unwrap();
    assert!((a.re + b.re).abs() < 1e-12);
    assert!((a.im + b.im).abs() > 1e-3);
}

#[test]
fn pmu_csv_round_trip() {
    let g = ieee118();
    let spec = partition("ieee118_areas.csv");
    let pmu = pmu_from_state(&g, &truth(&g), boundary_buses(&g, &spec), 1e-3, 1e-3, 4);
    let mut buf = Vec::new();
    write_pmu_csv(&mut buf, pmu.values()).unwrap();
    let back = read_pmu_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 13);
    for (b, r) in &back {
        let o = &pmu[b];
        assert!((r.vmag - o.vmag).abs() < 1e-15);
        assert!((r.angle - o.angle).abs() < 1e-15);
        assert!((r.sigma_angle - o.sigma_angle).abs() < 1e-15);
    }
}

fn partition_invariants(g: &NetworkGraph, spec: &PartitionSpec) -> Result<(), TestCaseError> {
    let state = newton_powerflow(g).unwrap_or_else(|_| truth(g));
    let pmu = pmu_from_state(g, &state, boundary_buses(g, spec), 0.0, 0.0, 0);
    let (areas, report) = apply_partition(g, spec, &pmu).unwrap();

    // buses: disjoint areas whose union is the original set
    let mut seen = BTreeSet::new();
    for a in &areas {
        for id in a.graph.bus_ids() {
            prop_assert!(seen.insert(id));
        }
    }
    prop_assert_eq!(seen, g.bus_ids().collect::<BTreeSet<_>>());

    // branches: in exactly one area graph, or in two removed lists
    let mut inside = vec![0usize; g.branches().len()];
    let mut removed = vec![0usize; g.branches().len()];
    for a in &areas {
        for br in a.graph.branches() {
            // parallel duplicates are matched to the first unclaimed copy
            let k = (0..g.branches().len())
                .find(|&k| &g.branches()[k] == br && inside[k] == 0)
                .unwrap();
            inside[k] += 1;
        }
        for r in &a.removed_branches {
            removed[r.index] += 1;
            prop_assert!(a.graph.index_of(r.local_bus).is_some());
            prop_assert!(a.graph.index_of(r.branch.other_end(r.local_bus)).is_none());
        }
    }
    for (k, br) in g.branches().iter().enumerate() {
        let cut = spec.area_of(br.from_bus) != spec.area_of(br.to_bus);
        let expect = match (cut, br.in_service) {
            (false, _) => (1, 0),
            (true, true) => (0, 2),
            (true, false) => (0, 0),
        };
        prop_assert_eq!((inside[k], removed[k]), expect);
    }
    prop_assert_eq!(
        report.inter_area_branch_count,
        removed.iter().filter(|&&c| c == 2).count()
    );

    // area power balance at the true sub-state with compensated injections
    let raw = synthesize_exact(g, &state);
    for a in &areas {
        let set = localize_measurements(a, raw.iter().cloned(), &KindSigmas::default()).unwrap();
        let sub = sub_state(g, &state, &a.graph);
        let adm = build_admittance(&a.graph).unwrap();
        let layout = MeasurementLayout::new(&a.graph, &set).unwrap();
        let (ha, hr) = h_evaluate(&adm, &sub, &layout);
        prop_assert!(max_abs_diff(&ha, &layout.active_values) < 1e-10);
        prop_assert!(max_abs_diff(&hr, &layout.reactive_values) < 1e-10);
        prop_assert!(a.reference_buses.iter().all(|p| a.graph.index_of(p.bus).is_some()));
    }
    Ok(())
}

fn synthesize_exact(g: &NetworkGraph, state: &StateVector) -> Vec<dsse::Measurement> {
    let plan = CoveragePlan {
        injections: true,
        flows: FlowCoverage::BothEnds,
        vmag: true,
    };
    dsse::measurement::synthesize(g, state, plan, 0, &KindSigmas::noise_free())
        .unwrap()
        .to_vec()
}

fn sub_state(g: &NetworkGraph, state: &StateVector, sub: &NetworkGraph) -> StateVector {
    let idx: Vec<usize> = sub.bus_ids().map(|b| g.index_of(b).unwrap()).collect();
    StateVector {
        angle: idx.iter().map(|&i| state.angle[i]).collect(),
        vmag: idx.iter().map(|&i| state.vmag[i]).collect(),
    }
}

#[test]
fn bundled_partitions_conserve_and_balance() {
    let (g, spec) = four_area_14();
    partition_invariants(&g, &spec).unwrap();
    partition_invariants(&ieee118(), &partition("ieee118_areas.csv")).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_partitions_conserve_and_balance(n in 3usize..30, extra in 0usize..15, k in 1usize..5, seed in any::<u64>()) {
        let g = random_network(n, extra, seed);
        let spec = grown_partition(&g, k, seed ^ 0x5eed);
        partition_invariants(&g, &spec)?;
    }

    #[test]
    fn partition_csv_round_trip(n in 3usize..30, k in 1usize..5, seed in any::<u64>()) {
        let g = random_network(n, 3, seed);
        let spec = grown_partition(&g, k, seed);
        let mut buf = Vec::new();
        dsse::partition::write_partition_csv(&mut buf, &spec).unwrap();
        prop_assert_eq!(dsse::partition::read_partition_csv(buf.as_slice()).unwrap(), spec);
    }
}
