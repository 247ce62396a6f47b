use std::collections::HashMap;

use restoration::netmodel::{load_network, synth_multifeeder, NetworkModel, SynthSpec};
use restoration::powerflow::{linear_pf, sweep_pf, OperatingPoint, SweepOptions};
use restoration::topology::{
    enumerate_cycles, is_radial_connected, load_or_enumerate_cycles, TopologyState,
    DEFAULT_CYCLE_CAP,
};

fn synth(feeders: usize, buses: usize, ties: usize, dgs: usize, seed: u64) -> NetworkModel {
    let mut spec = SynthSpec::new(feeders, buses, ties, dgs, seed);
    spec.regulators = seed.is_multiple_of(2);
    synth_multifeeder(&spec).unwrap()
}

fn loaded(model: &NetworkModel, factor: f64) -> OperatingPoint {
    let mut point = OperatingPoint::unloaded(model, model.normal_closed());
    for bus in model.load_buses().collect::<Vec<_>>() {
        point.serve(model, bus, factor);
    }
    point
}

#[test]
fn normal_state_is_radial_and_energizes_every_bus() {
    for seed in 1..=10 {
        let model = synth(4, 8, 3, 2, seed);
        let report = is_radial_connected(&model, &TopologyState::normal(&model));
        assert!(report.radial, "seed {seed}: {:?}", report.violations);
        assert_eq!(
            report.energized_buses.len(),
            model.buses().len(),
            "seed {seed}"
        );
    }
}

#[test]
fn enumerated_cycles_are_simple_and_switchable() {
    for seed in 1..=10 {
        let model = synth(3, 7, 3, 1, seed);
        let cycles = enumerate_cycles(&model, DEFAULT_CYCLE_CAP).unwrap();
        assert!(cycles.len() >= 3, "seed {seed}: {} cycles", cycles.len());
        for cycle in &cycles {
            let mut degree: HashMap<usize, usize> = HashMap::new();
            for &k in &cycle.edges {
                let (a, b) = model.edge_vertices(k);
                *degree.entry(a).or_default() += 1;
                *degree.entry(b).or_default() += 1;
            }
            assert!(
                degree.values().all(|d| *d == 2),
                "seed {seed}: {:?}",
                cycle.edge_ids(&model)
            );
            assert!(!cycle.switch_members.is_empty());
            assert!(cycle
                .switch_members
                .iter()
                .all(|k| model.is_switchable(*k) && cycle.edges.contains(k)));
        }
    }
}

#[test]
fn stale_cycle_cache_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cycles.json");
    let a = synth(3, 6, 2, 0, 1);
    let b = synth(3, 6, 3, 0, 2);
    let from_a = load_or_enumerate_cycles(&a, Some(&cache), DEFAULT_CYCLE_CAP).unwrap();
    assert_eq!(
        load_or_enumerate_cycles(&a, Some(&cache), DEFAULT_CYCLE_CAP).unwrap(),
        from_a
    );
    let from_b = load_or_enumerate_cycles(&b, Some(&cache), DEFAULT_CYCLE_CAP).unwrap();
    assert_eq!(from_b, enumerate_cycles(&b, DEFAULT_CYCLE_CAP).unwrap());
}

#[test]
fn network_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let model = synth(2, 6, 1, 1, 4);
    let path = dir.path().join("net.json");
    std::fs::write(&path, model.to_json()).unwrap();
    let back = load_network(&path).unwrap();
    assert_eq!(back.content_hash(), model.content_hash());
    assert_eq!(back.to_json(), model.to_json());
}

#[test]
fn linear_and_sweep_agree_on_synthetic_feeders() {
    for seed in 1..=6 {
        let model = synth(3, 10, 2, 0, seed);
        for factor in [0.75, 1.0] {
            let point = loaded(&model, factor);
            let lin = linear_pf(&model, &point).unwrap();
            let nl = sweep_pf(&model, &point, SweepOptions::default()).unwrap();
            let mut gap: f64 = 0.0;
            for i in 0..model.buses().len() {
                for p in 0..3 {
                    if nl.supplied[i][p] {
                        gap = gap.max((lin.v[i][p] - nl.v[i][p]).abs());
                    }
                }
            }
            assert!(gap <= 0.005, "seed {seed} factor {factor}: gap {gap}");
            for k in (0..model.edges().len()).filter(|k| model.is_source_adjacent(*k)) {
                let l: f64 = lin.p_kw[k].iter().sum();
                let n: f64 = nl.p_kw[k].iter().sum();
                assert!(
                    (l - n).abs() <= 0.05 * n.abs().max(1.0),
                    "seed {seed}: head {} linear {l} sweep {n}",
                    model.edge(k).id
                );
            }
        }
    }
}
