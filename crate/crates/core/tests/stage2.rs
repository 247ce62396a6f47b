mod support;

use std::collections::HashSet;

use restoration::stage1::Stage1Options;
use restoration::stage2::{
    replay_sequence, required_actions, solve_naive, solve_stage2, Stage2Error, Stage2Options,
    SwitchOp,
};
use support::restorable_case;

#[test]
fn random_sequences_satisfy_the_contract() {
    let s1 = Stage1Options::default();
    let s2 = Stage2Options::from_stage1(&s1);
    let mut checked = 0;
    let mut with_actions = 0;
    for seed in 1..=200 {
        if checked == 50 {
            break;
        }
        let Some((case, target)) = restorable_case(seed, s2.substeps_per_action) else {
            continue;
        };
        let actions = required_actions(&case.model, &case.scenario, &target);
        let seq = match solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2) {
            Ok(seq) => seq,
            Err(Stage2Error::Infeasible { cause }) => {
                eprintln!(
                    "seed {seed}: infeasible with {} actions: {cause}",
                    actions.len()
                );
                continue;
            }
            Err(e) => panic!("seed {seed}: {e}"),
        };
        let replay = replay_sequence(
            &case.model,
            &case.scenario,
            &seq,
            s2.v_min_pu,
            s2.v_max_pu,
            s2.feeder_loading_cap,
        );
        let naive = solve_naive(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
        eprintln!(
            "seed {seed}: actions {} obj {:.1} naive {:?} replay {}",
            actions.len(),
            seq.objective,
            naive.as_ref().map(|n| n.objective),
            replay.passed
        );
        assert!(replay.passed, "seed {seed}: {replay:#?}");
        assert_eq!(seq.actions.len(), actions.len(), "seed {seed}");
        let edges: HashSet<_> = seq.actions.iter().map(|a| a.edge.clone()).collect();
        assert_eq!(
            edges.len(),
            actions.len(),
            "seed {seed}: an edge acts twice"
        );
        for (m, a) in seq.actions.iter().enumerate() {
            let step = &seq.steps[m * s2.substeps_per_action];
            assert_eq!(step.action.as_ref(), Some(a));
            assert_eq!(
                step.closed_switches.contains(&a.edge),
                a.op == SwitchOp::Close
            );
        }
        if let Some(naive) = naive {
            assert!(
                seq.objective >= naive.objective - 1e-6 * naive.objective.abs().max(1.0),
                "seed {seed}"
            );
        }
        checked += 1;
        with_actions += usize::from(!actions.is_empty());
    }
    eprintln!("{checked} scenarios, {with_actions} with actions");
    assert!(checked >= 50);
}

use restoration::netmodel::FaultScenario;
use restoration::stage1::solve_stage1;
use restoration::stage2::{compare, interruption_stats, ReplayIssue, SwitchAction};
use support::{transfer_case, Case};

fn plan(case: &Case) -> (restoration::stage1::Stage1Solution, Stage2Options) {
    let s1 = Stage1Options::default();
    let target = solve_stage1(&case.model, &case.scenario, &case.cycles, &s1).unwrap();
    (target, Stage2Options::from_stage1(&s1))
}

#[test]
fn no_fault_gives_an_empty_sequence() {
    let case = Case::new(transfer_case().model, FaultScenario::no_fault());
    let (target, s2) = plan(&case);
    let seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
    assert!(seq.actions.is_empty());
    assert!(seq.steps.is_empty());
    let naive = solve_naive(&case.model, &case.scenario, &target, &case.cycles, &s2)
        .unwrap()
        .unwrap();
    let cmp = compare(&case.model, &case.scenario, &seq, Some(&naive));
    assert_eq!(Some(cmp.optimal_served_kw.clone()), cmp.naive_served_kw);
    assert!(
        replay_sequence(
            &case.model,
            &case.scenario,
            &seq,
            s2.v_min_pu,
            s2.v_max_pu,
            s2.feeder_loading_cap
        )
        .passed
    );
}

#[test]
fn load_transfer_beats_the_naive_order() {
    let case = transfer_case();
    let (target, s2) = plan(&case);
    let ops: Vec<_> = required_actions(&case.model, &case.scenario, &target)
        .into_iter()
        .map(|(k, op)| (case.model.edge(k).id.clone(), op))
        .collect();
    assert_eq!(
        ops,
        [
            ("s_a".to_string(), SwitchOp::Open),
            ("t1".into(), SwitchOp::Close),
            ("t2".into(), SwitchOp::Close)
        ]
    );
    let seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
    let order: Vec<_> = seq.actions.iter().map(|a| a.edge.as_str()).collect();
    assert_eq!(order, ["s_a", "t2", "t1"]);
    let naive = solve_naive(&case.model, &case.scenario, &target, &case.cycles, &s2)
        .unwrap()
        .unwrap();
    assert!(seq.objective > naive.objective + 1.0);

    // The healthy load on a2 is dark for one macro step in the optimal
    // order and two in the naive one.
    let (opt_cmi, opt_n) = interruption_stats(&case.model, &case.scenario, &seq, 1.0);
    let (naive_cmi, naive_n) = interruption_stats(&case.model, &case.scenario, &naive, 1.0);
    assert_eq!((opt_n, naive_n), (1, 1));
    assert!(naive_cmi > opt_cmi);
    let cmp = compare(&case.model, &case.scenario, &seq, Some(&naive));
    let opt_total: f64 = cmp.optimal_served_kw.iter().sum();
    let naive_total: f64 = cmp.naive_served_kw.as_ref().unwrap().iter().sum();
    assert!(opt_total > naive_total);
}

#[test]
fn pickup_demand_follows_the_curve() {
    let case = transfer_case();
    let (target, s2) = plan(&case);
    let seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
    let x = case.model.bus_index("x").unwrap();
    let start = seq
        .steps
        .iter()
        .position(|s| s.served.iter().any(|b| b == "x"))
        .unwrap();
    let curve = restoration::stage2::pickup_curve(&case.model, x).unwrap();
    for (age, step) in seq.steps[start..].iter().enumerate() {
        assert!((step.demand_factor[x] - curve.at(age + 1)).abs() < 1e-9);
    }
    assert_eq!(seq.steps[start].demand_factor[x], 2.0);
    assert_eq!(seq.steps.last().unwrap().demand_factor[x], 1.0);
}

#[test]
fn replay_flags_a_closed_loop() {
    let case = transfer_case();
    let (target, s2) = plan(&case);
    let mut seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
    // Close t2 while s_a is still closed.
    seq.steps[0]
        .closed_switches
        .extend(["s_a".to_string(), "t2".to_string()]);
    seq.steps[0].action = Some(SwitchAction {
        edge: "t2".into(),
        op: SwitchOp::Close,
    });
    let report = replay_sequence(
        &case.model,
        &case.scenario,
        &seq,
        s2.v_min_pu,
        s2.v_max_pu,
        s2.feeder_loading_cap,
    );
    assert!(!report.passed);
    assert!(report.steps[0]
        .issues
        .iter()
        .any(|i| matches!(i, ReplayIssue::NotRadial { .. })));
}

#[test]
fn replay_flags_a_dropped_pickup() {
    let case = transfer_case();
    let (target, s2) = plan(&case);
    let mut seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
    let start = seq
        .steps
        .iter()
        .position(|s| s.served.iter().any(|b| b == "x"))
        .unwrap();
    seq.steps[start + 1].served.retain(|b| b != "x");
    let report = replay_sequence(
        &case.model,
        &case.scenario,
        &seq,
        s2.v_min_pu,
        s2.v_max_pu,
        s2.feeder_loading_cap,
    );
    assert!(!report.passed);
    assert!(report.steps[start + 1]
        .issues
        .iter()
        .any(|i| matches!(i, ReplayIssue::PickupDropped { bus } if bus == "x")));
}

#[test]
fn replay_flags_a_terminal_mismatch() {
    let case = transfer_case();
    let (target, s2) = plan(&case);
    let mut seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
    seq.target_closed.retain(|e| e != "t1");
    let report = replay_sequence(
        &case.model,
        &case.scenario,
        &seq,
        s2.v_min_pu,
        s2.v_max_pu,
        s2.feeder_loading_cap,
    );
    assert!(report
        .issues
        .iter()
        .any(|i| matches!(i, ReplayIssue::TerminalMismatch { .. })));
}

#[test]
fn sequence_json_round_trips() {
    let case = transfer_case();
    let (target, s2) = plan(&case);
    let seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2).unwrap();
    let text = serde_json::to_string(&seq).unwrap();
    let back: restoration::stage2::SwitchingSequence = serde_json::from_str(&text).unwrap();
    assert_eq!(back, seq);
}
