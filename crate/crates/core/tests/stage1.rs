mod support;

use restoration::milp::oracle::brute_force_oracle;
use restoration::stage1::{solve_stage1, Stage1Options};
use support::small_case;

#[test]
fn matches_oracle_on_random_cases() {
    let options = Stage1Options::default();
    for seed in 1..=10 {
        let case = small_case(seed, 12);
        let oracle = brute_force_oracle(&case.model, &case.scenario, &options).unwrap();
        let solved = solve_stage1(&case.model, &case.scenario, &case.cycles, &options);
        match (oracle, solved) {
            (Some(o), Ok(s)) => {
                eprintln!(
                    "seed {seed}: oracle {} ({}) milp {} ({})",
                    o.objective, o.weighted_restored_kw, s.objective, s.weighted_restored_kw
                );
                assert_eq!(
                    o.weighted_restored_kw, s.weighted_restored_kw,
                    "seed {seed}"
                );
                assert!((o.objective - s.objective).abs() < 1e-6, "seed {seed}");
            }
            (o, s) => panic!(
                "seed {seed}: oracle {:?} vs milp {:?}",
                o.map(|o| o.objective),
                s.map(|s| s.objective)
            ),
        }
    }
}

use restoration::netmodel::{isolate_fault, synth_multifeeder, EdgeKind, FaultScenario, SynthSpec};
use restoration::reports::check_stage1;
use restoration::stage1::Stage1Error;
use restoration::topology::{is_radial_connected, TopologyState};
use support::{sequencing_case, Case};

fn synth_case(
    feeders: usize,
    buses: usize,
    ties: usize,
    dgs: usize,
    seed: u64,
    head: f64,
) -> restoration::netmodel::NetworkModel {
    let mut spec = SynthSpec::new(feeders, buses, ties, dgs, seed);
    spec.head_capacity_factor = head;
    spec.switch_fraction = 0.5;
    synth_multifeeder(&spec).unwrap()
}

fn assert_radial_and_isolated(case: &Case, closed: &[bool]) {
    let state = TopologyState::post_fault(&case.model, &case.scenario);
    let state = TopologyState {
        closed: closed.to_vec(),
        ..state
    };
    let report = is_radial_connected(&case.model, &state);
    assert!(report.radial, "{:?}", report.violations);
}

#[test]
fn no_fault_keeps_the_normal_state() {
    let model = synth_case(3, 6, 2, 0, 5, 1.6);
    let case = Case::new(model, FaultScenario::no_fault());
    let sol = solve_stage1(
        &case.model,
        &case.scenario,
        &case.cycles,
        &Stage1Options::default(),
    )
    .unwrap();
    assert!(sol.switch_ops.is_empty());
    assert!(sol.shed_kw.abs() < 1e-9);
    assert_eq!(sol.closed, case.model.normal_closed());
}

#[test]
fn restored_states_pass_the_nonlinear_check() {
    let options = Stage1Options::default();
    let mut checked = 0;
    for seed in 1..=20 {
        let Some(case) = sequencing_case(seed, None) else {
            continue;
        };
        let sol = solve_stage1(&case.model, &case.scenario, &case.cycles, &options).unwrap();
        assert_radial_and_isolated(&case, &sol.closed);
        let check = check_stage1(&case.model, &sol, &options);
        assert!(
            check.passed,
            "seed {seed}: {:?} {:?}",
            check.violations, check.error
        );
        assert!(
            check.max_voltage_gap_pu < 0.01,
            "seed {seed}: gap {}",
            check.max_voltage_gap_pu
        );
        checked += 1;
    }
    assert!(checked >= 15);
}

#[test]
fn scarce_capacity_forces_shedding() {
    let model = synth_case(2, 6, 1, 0, 3, 1.0);
    let line = (0..model.edges().len())
        .find(|k| {
            model.edge(*k).kind == EdgeKind::PlainLine && model.edge(*k).id.starts_with("f1_")
        })
        .unwrap();
    let scenario = isolate_fault(&model, line);
    let case = Case::new(model, scenario);
    let loose = solve_stage1(
        &case.model,
        &case.scenario,
        &case.cycles,
        &Stage1Options::default(),
    )
    .unwrap();
    let tight_options = Stage1Options {
        feeder_loading_cap: 0.6,
        ..Stage1Options::default()
    };
    let tight = solve_stage1(&case.model, &case.scenario, &case.cycles, &tight_options).unwrap();
    assert!(
        tight.shed_kw > loose.shed_kw + 1.0,
        "tight {} loose {}",
        tight.shed_kw,
        loose.shed_kw
    );
    assert_radial_and_isolated(&case, &tight.closed);
}

#[test]
fn dg_islanding_never_reduces_restoration() {
    let with_dg = Stage1Options::default();
    let without = Stage1Options {
        allow_dg_islanding: false,
        ..Stage1Options::default()
    };
    let mut islands = 0;
    for seed in 1..=8 {
        let model = synth_case(3, 6, 1, 2, seed, 1.1);
        let Some(scenario) = restoration::netmodel::synth_scenario(&model, seed) else {
            continue;
        };
        let case = Case::new(model, scenario);
        let a = solve_stage1(&case.model, &case.scenario, &case.cycles, &with_dg).unwrap();
        let b = solve_stage1(&case.model, &case.scenario, &case.cycles, &without).unwrap();
        assert!(b.dg_islands.is_empty());
        assert!(
            a.weighted_restored_kw >= b.weighted_restored_kw - 1e-6,
            "seed {seed}"
        );
        if a.weighted_restored_kw > b.weighted_restored_kw + 1e-6 {
            assert!(!a.dg_islands.is_empty(), "seed {seed}");
        }
        islands += a.dg_islands.len();
        assert_radial_and_isolated(&case, &a.closed);
    }
    eprintln!("{islands} islands formed");
}

#[test]
fn two_simultaneous_faults_stay_isolated() {
    let model = synth_case(3, 7, 3, 0, 11, 2.0);
    let lines: Vec<usize> = (0..model.edges().len())
        .filter(|k| model.edge(*k).kind == EdgeKind::PlainLine)
        .collect();
    let first = isolate_fault(&model, lines[1]);
    let second = isolate_fault(&model, lines[lines.len() - 2]);
    let mut scenario = FaultScenario {
        description: "two faults".into(),
        ..FaultScenario::default()
    };
    for s in [&first, &second] {
        scenario
            .faulted_edges
            .extend(s.faulted_edges.iter().cloned());
        scenario
            .tripped_switches
            .extend(s.tripped_switches.iter().cloned());
        scenario
            .isolation_switches
            .extend(s.isolation_switches.iter().cloned());
    }
    scenario
        .isolation_switches
        .retain(|id| !scenario.tripped_switches.contains(id));
    scenario.validate(&model).unwrap();
    let case = Case::new(model, scenario);
    let sol = solve_stage1(
        &case.model,
        &case.scenario,
        &case.cycles,
        &Stage1Options::default(),
    )
    .unwrap();
    assert_radial_and_isolated(&case, &sol.closed);
    for (k, forced) in case.scenario.forced_open(&case.model).iter().enumerate() {
        if *forced {
            assert!(!sol.closed[k], "{} closed", case.model.edge(k).id);
        }
    }
}

#[test]
fn invalid_voltage_window_is_rejected() {
    let case = small_case(1, 12);
    let options = Stage1Options {
        v_min_pu: 1.1,
        v_max_pu: 1.0,
        ..Stage1Options::default()
    };
    let err = solve_stage1(&case.model, &case.scenario, &case.cycles, &options).unwrap_err();
    assert!(matches!(err, Stage1Error::Options(_)));
}

#[test]
fn repeated_solves_are_identical() {
    let case = sequencing_case(3, None).unwrap();
    let options = Stage1Options::default();
    let a = solve_stage1(&case.model, &case.scenario, &case.cycles, &options).unwrap();
    let b = solve_stage1(&case.model, &case.scenario, &case.cycles, &options).unwrap();
    assert_eq!(a.closed, b.closed);
    assert_eq!(a.served, b.served);
    assert_eq!(a.objective, b.objective);
}
