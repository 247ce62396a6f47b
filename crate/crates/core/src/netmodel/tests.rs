use super::*;

fn two_bus() -> NetworkDocument {
    serde_json::from_str(
        r#"{
        "schema_version": 1,
        "name": "two-bus",
        "base_kva": 1000,
        "buses": [
            {"id": "s", "phases": "abc", "base_kv": 12.47, "is_source": true},
            {"id": "l", "phases": "abc", "base_kv": 12.47,
             "load_p": [100, 100, 100], "load_q": [30, 30, 30]}
        ],
        "edges": [
            {"id": "e1", "from": "s", "to": "l", "kind": "plain_line", "phases": "abc",
             "normal_closed": true, "s_rated": 1000,
             "r": [[0.3,0,0],[0,0.3,0],[0,0,0.3]], "x": [[0.6,0,0],[0,0.6,0],[0,0,0.6]]}
        ]
    }"#,
    )
    .unwrap()
}

#[test]
fn minimal_network_loads() {
    let model = NetworkModel::from_document(two_bus()).unwrap();
    assert_eq!(model.buses().len(), 2);
    assert_eq!(model.edges().len(), 1);
    assert_eq!(model.bus_index("l"), Some(1));
    assert!((model.total_load_kw() - 300.0).abs() < 1e-12);
    let zb = 12.47f64 * 12.47 * 1000.0 / 1000.0;
    let (r, _) = model.impedance_pu(0);
    assert!((r[0][0] - 0.3 / zb).abs() < 1e-15);
}

#[test]
fn tie_switch_marked_closed_is_rejected() {
    let mut doc = two_bus();
    doc.edges[0].kind = EdgeKind::TieSwitch;
    let err = NetworkModel::from_document(doc).unwrap_err();
    assert!(err.to_string().contains("e1"), "{err}");
}

#[test]
fn dangling_and_duplicate_references() {
    let mut doc = two_bus();
    doc.edges[0].to = "nowhere".into();
    assert!(matches!(
        NetworkModel::from_document(doc),
        Err(NetworkError::DanglingReference { .. })
    ));

    let mut doc = two_bus();
    doc.buses[1].id = "s".into();
    assert!(matches!(
        NetworkModel::from_document(doc),
        Err(NetworkError::DuplicateId { .. })
    ));
}

#[test]
fn phase_rules() {
    let mut doc = two_bus();
    doc.buses[1].phases = "ab".parse().unwrap();
    doc.buses[1].load_p[2] = 0.0;
    doc.buses[1].load_q[2] = 0.0;
    assert!(matches!(
        NetworkModel::from_document(doc),
        Err(NetworkError::Phase(_))
    ));

    let mut doc = two_bus();
    doc.buses[1].phases = "a".parse().unwrap();
    doc.edges[0].phases = "a".parse().unwrap();
    doc.edges[0].r = [[0.3, 0.0, 0.0], [0.0; 3], [0.0; 3]];
    doc.edges[0].x = [[0.6, 0.0, 0.0], [0.0; 3], [0.0; 3]];
    let err = NetworkModel::from_document(doc).unwrap_err();
    assert!(err.to_string().contains("phase b"), "{err}");
}

#[test]
fn unknown_fields_are_schema_errors() {
    let text = serde_json::to_string(&two_bus())
        .unwrap()
        .replace("\"name\"", "\"bogus\":1,\"name\"");
    assert!(matches!(
        NetworkModel::from_json(&text),
        Err(NetworkError::Schema(_))
    ));
}

#[test]
fn switchless_loop_is_rejected() {
    let mut doc = two_bus();
    let mut parallel = doc.edges[0].clone();
    parallel.id = "e2".into();
    doc.edges.push(parallel);
    let err = NetworkModel::from_document(doc).unwrap_err();
    // The normal state already loops; either diagnosis names the edges.
    assert!(err.to_string().contains("e2") || err.to_string().contains("e1"));
}

#[test]
fn round_trip_is_identical() {
    let model = synth_multifeeder(&SynthSpec::new(3, 7, 3, 2, 42)).unwrap();
    let again = NetworkModel::from_json(&model.to_json()).unwrap();
    assert_eq!(model.document(), again.document());
    assert_eq!(model.content_hash(), again.content_hash());
}

#[test]
fn synth_is_deterministic() {
    let spec = SynthSpec::new(4, 10, 3, 2, 7);
    let a = synth_multifeeder(&spec).unwrap();
    let b = synth_multifeeder(&spec).unwrap();
    assert_eq!(a.document(), b.document());
    let c = synth_multifeeder(&SynthSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.document(), c.document());
}

#[test]
fn synth_four_feeder_structure() {
    let model = synth_multifeeder(&SynthSpec::new(4, 12, 7, 4, 1)).unwrap();
    let ties = model
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::TieSwitch)
        .count();
    assert_eq!(ties, 7);
    assert_eq!(model.dgs().len(), 4);
    assert_eq!(model.feeder_heads().len(), 4);
    for e in model.edges() {
        let from = &model.buses()[model.bus_index(&e.from).unwrap()];
        let to = &model.buses()[model.bus_index(&e.to).unwrap()];
        assert!(e.phases.is_subset(from.phases) && e.phases.is_subset(to.phases));
    }
}

#[test]
fn synth_rejects_impossible_ties() {
    assert!(synth_multifeeder(&SynthSpec::new(1, 5, 1, 0, 0)).is_err());
    assert!(synth_multifeeder(&SynthSpec::new(2, 2, 5, 0, 0)).is_err());
}

#[test]
fn isolation_scenario_bounds_the_fault_zone() {
    let model = synth_multifeeder(&SynthSpec::new(2, 10, 2, 1, 9)).unwrap();
    let scenario = synth_scenario(&model, 3).unwrap();
    scenario.validate(&model).unwrap();
    assert_eq!(scenario.faulted_edges.len(), 1);
    assert_eq!(scenario.tripped_switches.len(), 1);
}
