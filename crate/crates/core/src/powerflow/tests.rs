use super::*;
use crate::netmodel::{synth_multifeeder, NetworkDocument, SynthSpec};

fn two_bus(phases: &str, mutual: f64) -> NetworkModel {
    let doc: NetworkDocument = serde_json::from_str(&format!(
        r#"{{
        "schema_version": 1,
        "base_kva": 1000,
        "buses": [
            {{"id": "s", "phases": "abc", "base_kv": 12.47, "is_source": true}},
            {{"id": "l", "phases": "{phases}", "base_kv": 12.47}}
        ],
        "edges": [
            {{"id": "e1", "from": "s", "to": "l", "kind": "plain_line", "phases": "{phases}",
             "normal_closed": true, "s_rated": 3000,
             "r": [[0.4,{m},{m}],[{m},0.4,{m}],[{m},{m},0.4]],
             "x": [[0.9,{m},{m}],[{m},0.9,{m}],[{m},{m},0.9]]}}
        ]
    }}"#,
        m = mutual
    ))
    .unwrap();
    let mut doc = doc;
    let set: crate::netmodel::PhaseSet = phases.parse().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            if !set.contains_index(i) || !set.contains_index(j) {
                doc.edges[0].r[i][j] = 0.0;
                doc.edges[0].x[i][j] = 0.0;
            }
        }
    }
    NetworkModel::from_document(doc).unwrap()
}

fn feeder(seed: u64) -> NetworkModel {
    let mut spec = SynthSpec::new(1, 12, 0, 0, seed);
    spec.single_phase_fraction = 0.0;
    synth_multifeeder(&spec).unwrap()
}

fn loaded(model: &NetworkModel, factor: f64) -> OperatingPoint {
    let mut point = OperatingPoint::unloaded(model, model.normal_closed());
    for b in model.load_buses().collect::<Vec<_>>() {
        point.serve(model, b, factor);
    }
    point
}

#[test]
fn zero_load_gives_flat_profile() {
    let model = feeder(3);
    let point = OperatingPoint::unloaded(&model, model.normal_closed());
    let lin = linear_pf(&model, &point).unwrap();
    let nl = sweep_pf(&model, &point, SweepOptions::default()).unwrap();
    for (i, bus) in model.buses().iter().enumerate() {
        for p in bus.phases.indices() {
            assert!((lin.u[i][p] - 1.0).abs() < 1e-12);
            assert!((nl.v[i][p] - 1.0).abs() < 1e-12);
        }
    }
    assert!(lin.p_kw.iter().flatten().all(|x| *x == 0.0));
    assert!(nl.p_kw.iter().flatten().all(|x| x.abs() < 1e-12));
}

#[test]
fn single_phase_two_bus_matches_hand_evaluation() {
    let model = two_bus("a", 0.0);
    let mut point = OperatingPoint::unloaded(&model, vec![true]);
    point.p_kw[1] = [120.0, 0.0, 0.0];
    point.q_kvar[1] = [40.0, 0.0, 0.0];
    let flow = linear_pf(&model, &point).unwrap();
    let zb = 12.47f64.powi(2) * 1000.0 / 1000.0;
    let sb = 1000.0 / 3.0;
    let expected = 1.0 - 2.0 * (0.4 / zb * 120.0 / sb + 0.9 / zb * 40.0 / sb);
    assert!(
        (flow.u[1][0] - expected).abs() < 1e-14,
        "{} vs {expected}",
        flow.u[1][0]
    );
    assert!((flow.p_kw[0][0] - 120.0).abs() < 1e-12);
    assert_eq!(flow.u[1][1], 0.0);
    assert!(!flow.supplied[1][1]);
}

#[test]
fn balanced_case_is_symmetric() {
    let model = two_bus("abc", 0.15);
    let mut point = OperatingPoint::unloaded(&model, vec![true]);
    point.p_kw[1] = [200.0; 3];
    point.q_kvar[1] = [65.0; 3];
    let lin = linear_pf(&model, &point).unwrap();
    let nl = sweep_pf(&model, &point, SweepOptions::default()).unwrap();
    for p in 1..3 {
        assert!((lin.u[1][p] - lin.u[1][0]).abs() < 1e-12);
        assert!((nl.v[1][p] - nl.v[1][0]).abs() < 1e-9);
    }
}

#[test]
fn linear_error_grows_with_load() {
    let model = two_bus("abc", 0.1);
    let mut errors = Vec::new();
    for kw in [20.0, 200.0, 800.0] {
        let mut point = OperatingPoint::unloaded(&model, vec![true]);
        point.p_kw[1] = [kw; 3];
        point.q_kvar[1] = [kw / 3.0; 3];
        let lin = linear_pf(&model, &point).unwrap();
        let nl = sweep_pf(&model, &point, SweepOptions::default()).unwrap();
        errors.push((lin.v[1][0] - nl.v[1][0]).abs());
    }
    assert!(errors[0] < 1e-4, "{errors:?}");
    assert!(errors[0] < errors[1] && errors[1] < errors[2], "{errors:?}");
}

#[test]
fn coupled_unbalanced_line_sign_matches_sweep() {
    let model = two_bus("abc", 0.2);
    let mut point = OperatingPoint::unloaded(&model, vec![true]);
    point.p_kw[1] = [300.0, 20.0, 150.0];
    point.q_kvar[1] = [90.0, 5.0, 40.0];
    let lin = linear_pf(&model, &point).unwrap();
    let nl = sweep_pf(&model, &point, SweepOptions::default()).unwrap();
    let (r, x) = model.impedance_pu(0);
    let (rt, _) = composite_impedance(&r, &x);
    // Reactance composite with the opposite sign on the r coupling term.
    let sb = model.s_base_phase();
    let mut flipped = [0.0; 3];
    for p in 0..3 {
        let mut drop = 0.0;
        for q in 0..3 {
            let g = Complex64::from_polar(1.0, -2.0 * PI / 3.0 * (p as f64 - q as f64));
            let xt_alt = g.re * x[p][q] + g.im * r[p][q];
            drop += rt[p][q] * point.p_kw[1][q] / sb + xt_alt * point.q_kvar[1][q] / sb;
        }
        flipped[p] = (1.0 - 2.0 * drop).sqrt();
    }
    for p in 0..3 {
        let err = (lin.v[1][p] - nl.v[1][p]).abs();
        assert!(err < 2e-3, "phase {p}: {err}");
        assert!(err <= (flipped[p] - nl.v[1][p]).abs() + 1e-12);
    }
}

#[test]
fn feeder_linear_and_sweep_agree_at_full_load() {
    for seed in 1..4 {
        let model = feeder(seed);
        let point = loaded(&model, 1.0);
        let lin = linear_pf(&model, &point).unwrap();
        let nl = sweep_pf(&model, &point, SweepOptions::default()).unwrap();
        for (i, bus) in model.buses().iter().enumerate() {
            for p in bus.phases.indices() {
                assert!((lin.v[i][p] - nl.v[i][p]).abs() < 5e-3);
            }
        }
    }
}

#[test]
fn lossless_aggregation_holds_at_every_bus() {
    let model = feeder(5);
    let point = loaded(&model, 0.8);
    let flow = linear_pf(&model, &point).unwrap();
    for i in 0..model.buses().len() {
        if model.bus(i).is_source {
            continue;
        }
        for p in 0..3 {
            let mut net = point.p_kw[i][p];
            for &k in model.incident_edges(i) {
                let (f, _) = model.edge_endpoints(k);
                net += if f == i {
                    flow.p_kw[k][p]
                } else {
                    -flow.p_kw[k][p]
                };
            }
            assert!(net.abs() < 1e-9, "bus {i} phase {p}: {net}");
        }
    }
}

#[test]
fn deenergized_buses_are_zero() {
    let model = feeder(2);
    let mut point = loaded(&model, 1.0);
    let brk = model.edge_index("f1_brk").unwrap();
    point.closed[brk] = false;
    for i in 0..model.buses().len() {
        if model.feeder_of_bus(i).is_some() && !model.bus(i).id.starts_with("f1_h") {
            point.p_kw[i] = [0.0; 3];
            point.q_kvar[i] = [0.0; 3];
        }
    }
    let flow = linear_pf(&model, &point).unwrap();
    let downstream = model.bus_index("f1_1").unwrap();
    assert!(!flow.energized[downstream]);
    assert_eq!(flow.u[downstream], [0.0; 3]);
    assert_eq!(flow.p_kw[brk], [0.0; 3]);
}

#[test]
fn closed_loop_is_rejected() {
    let spec = SynthSpec::new(2, 5, 1, 0, 4);
    let model = synth_multifeeder(&spec).unwrap();
    let mut point = OperatingPoint::unloaded(&model, model.normal_closed());
    let tie = model.edge_index("tie1").unwrap();
    point.closed[tie] = true;
    assert!(matches!(
        linear_pf(&model, &point),
        Err(PowerFlowError::NotRadial(_))
    ));
    assert!(matches!(
        sweep_pf(&model, &point, SweepOptions::default()),
        Err(PowerFlowError::NotRadial(_))
    ));
}

#[test]
fn regulator_scales_squared_voltage() {
    let mut spec = SynthSpec::new(1, 4, 0, 0, 9);
    spec.regulators = true;
    let model = synth_multifeeder(&spec).unwrap();
    let mut point = OperatingPoint::unloaded(&model, model.normal_closed());
    point.taps[0] = [25; 3];
    let flow = linear_pf(&model, &point).unwrap();
    let k = model.regulator_edge(0);
    let (f, t) = model.edge_endpoints(k);
    let a = tap_ratio(25);
    for p in 0..3 {
        assert!((flow.u[t][p] - a * a * flow.u[f][p]).abs() < 1e-12);
    }
    let nl = sweep_pf(&model, &point, SweepOptions::default()).unwrap();
    assert!((nl.v[t][0] - a * nl.v[f][0]).abs() < 1e-12);
}

#[test]
fn low_voltage_is_flagged() {
    let model = two_bus("abc", 0.0);
    let point = OperatingPoint::unloaded(&model, vec![true]);
    let mut flow = linear_pf(&model, &point).unwrap();
    assert!(check_limits(&flow, &model, 0.9372f64.powi(2), 1.05f64.powi(2)).is_empty());
    flow.u[1][1] = 0.93f64.powi(2);
    flow.v[1][1] = 0.93;
    let v = check_limits(&flow, &model, 0.9372f64.powi(2), 1.05f64.powi(2));
    assert_eq!(v.len(), 1);
    assert!(matches!(&v[0], Violation::UnderVoltage { bus, phase: 'b', .. } if bus == "l"));
}

#[test]
fn point_inside_hexagon_but_outside_circle_is_flagged() {
    let model = two_bus("abc", 0.0);
    let point = OperatingPoint::unloaded(&model, vec![true]);
    let mut flow = linear_pf(&model, &point).unwrap();
    let rating = model.phase_rating_kva(0);
    // Vertex direction of the hexagon is the P axis.
    flow.p_kw[0][0] = 1.05 * rating;
    let r3 = 3f64.sqrt();
    let s_e = crate::milp::polygon_scale(6) * rating;
    let (p, q) = (flow.p_kw[0][0], 0.0);
    assert!(q + r3 * p <= r3 * s_e && q - r3 * p >= -r3 * s_e && q.abs() <= r3 / 2.0 * s_e);
    let v = check_limits(&flow, &model, 0.81, 1.21);
    assert!(matches!(&v[..], [Violation::Thermal { edge, phase: 'a', .. }] if edge == "e1"));
}
