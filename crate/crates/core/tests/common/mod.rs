#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;

use dsse::measurement::{group_by_bus, synthesize, CoveragePlan, FlowCoverage, KindSigmas};
use dsse::network::io::import_case;
use dsse::partition::{
    apply_partition, boundary_buses, localize_all, pmu_from_state, read_partition_csv, BoundaryReport,
};
use dsse::{AreaNetwork, BusId, MeasurementSet, NetworkGraph, PartitionSpec, PmuRecord, StateVector};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn case(name: &str) -> NetworkGraph {
    import_case(&data(name), None).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn ieee14() -> NetworkGraph {
    case("ieee14_solved.json")
}

pub fn ieee118() -> NetworkGraph {
    case("ieee118_solved.json")
}

pub fn partition(name: &str) -> PartitionSpec {
    read_partition_csv(File::open(data(name)).unwrap()).unwrap()
}

pub fn truth(g: &NetworkGraph) -> StateVector {
    g.true_state().expect("solved case")
}

pub fn full_coverage() -> CoveragePlan {
    CoveragePlan {
        injections: true,
        vmag: true,
        flows: FlowCoverage::BothEnds,
    }
}

pub fn noise_free(g: &NetworkGraph, plan: CoveragePlan) -> MeasurementSet {
    synthesize(g, &truth(g), plan, 0, &KindSigmas::noise_free()).unwrap()
}

pub fn noisy(g: &NetworkGraph, plan: CoveragePlan, seed: u64) -> MeasurementSet {
    synthesize(g, &truth(g), plan, seed, &KindSigmas::default()).unwrap()
}

pub fn exact_pmus(g: &NetworkGraph, spec: &PartitionSpec) -> BTreeMap<BusId, PmuRecord> {
    pmu_from_state(g, &truth(g), boundary_buses(g, spec), 0.0, 0.0, 0)
}

/// Areas with exact boundary phasors and the whole set localized to them.
pub fn split(
    g: &NetworkGraph,
    spec: &PartitionSpec,
    whole: &MeasurementSet,
) -> (Vec<AreaNetwork>, Vec<MeasurementSet>, BoundaryReport) {
    let (areas, report) = apply_partition(g, spec, &exact_pmus(g, spec)).unwrap();
    let sets = localize_all(&areas, &whole.to_vec(), &KindSigmas::default()).unwrap();
    (areas, sets, report)
}

pub fn whole(g: &NetworkGraph, whole: &MeasurementSet) -> (Vec<AreaNetwork>, Vec<MeasurementSet>) {
    let set = group_by_bus(g, whole.to_vec()).unwrap();
    (vec![AreaNetwork::whole(g)], vec![set])
}

/// Angle MSE in deg² and magnitude MSE in pu².
pub fn mse(a: &StateVector, b: &StateVector) -> (f64, f64) {
    let n = a.len() as f64;
    let ea = a
        .angle
        .iter()
        .zip(&b.angle)
        .map(|(x, y)| (x - y).to_degrees().powi(2))
        .sum::<f64>();
    let ev = a.vmag.iter().zip(&b.vmag).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    (ea / n, ev / n)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Deterministic random SPD matrix as lower triplets: random sparse
/// symmetric off-diagonals with a strictly dominant diagonal.
pub fn random_spd(n: usize, density: f64, seed: u64) -> Vec<(usize, usize, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut diag = vec![0.0; n];
    let mut out = Vec::new();
    for j in 0..n {
        for i in j + 1..n {
            if rng.random_bool(density) {
                let v: f64 = rng.random_range(-1.0..1.0);
                diag[i] += v.abs();
                diag[j] += v.abs();
                out.push((i, j, v));
            }
        }
    }
    for (j, d) in diag.into_iter().enumerate() {
        out.push((j, j, d + rng.random_range(0.1..1.0)));
    }
    out
}

/// Random connected network: a random spanning tree plus extra branches,
/// with taps, phase shifts, charging and shunts, and a solved-looking state.
pub fn random_network(n: usize, extra: usize, seed: u64) -> NetworkGraph {
    use dsse::network::{Branch, Bus, BusKind};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<BusId> = (0..n).map(|i| 3 * i as BusId + 1).collect();
    let slack = ids[rng.random_range(0..n)];
    let buses = ids
        .iter()
        .map(|&id| {
            let kind = if id == slack {
                BusKind::Slack
            } else if rng.random_bool(0.3) {
                BusKind::Generator
            } else {
                BusKind::Load
            };
            let mut b = Bus::new(id, kind);
            if rng.random_bool(0.3) {
                b.shunt_g = rng.random_range(0.0..0.05);
                b.shunt_b = rng.random_range(-0.1..0.2);
            }
            b.true_vmag = Some(rng.random_range(0.94..1.06));
            b.true_angle = Some(if id == slack { 0.0 } else { rng.random_range(-0.3..0.3) });
            b
        })
        .collect();
    let branch = |rng: &mut rand_chacha::ChaCha8Rng, f: BusId, t: BusId| {
        let mut br = Branch::line(
            f,
            t,
            rng.random_range(0.0..0.05),
            rng.random_range(0.02..0.3),
            rng.random_range(0.0..0.1),
        );
        if rng.random_bool(0.2) {
            br.tap_ratio = rng.random_range(0.9..1.1);
        }
        if rng.random_bool(0.1) {
            br.phase_shift = rng.random_range(-0.1..0.1);
        }
        br
    };
    let mut branches = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        branches.push(branch(&mut rng, ids[i], ids[j]));
    }
    for _ in 0..extra {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            branches.push(branch(&mut rng, ids[i], ids[j]));
        }
    }
    NetworkGraph::new(buses, branches, slack, 100.0).unwrap()
}
