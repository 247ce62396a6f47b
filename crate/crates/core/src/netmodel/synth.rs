//! Deterministic synthetic multi-feeder networks.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Bus, ClpuParams, Dg, Edge, EdgeKind, FaultScenario, Matrix3, NetworkDocument, NetworkError,
    NetworkModel, Phase, PhaseSet, Regulator, NEUTRAL_TAP, SCHEMA_VERSION,
};

const BASE_KV: f64 = 12.47;
const BASE_KVA: f64 = 1000.0;
const POWER_FACTOR: f64 = 0.95;

/// Three-phase overhead line, ohms per mile.
const R_3PH: Matrix3 = [
    [0.3465, 0.1560, 0.1580],
    [0.1560, 0.3375, 0.1535],
    [0.1580, 0.1535, 0.3414],
];
const X_3PH: Matrix3 = [
    [1.0179, 0.5017, 0.4236],
    [0.5017, 1.0478, 0.3849],
    [0.4236, 0.3849, 1.0348],
];
/// Single-phase lateral, ohms per mile.
const R_1PH: f64 = 1.3292;
const X_1PH: f64 = 1.3475;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub feeders: usize,
    /// Buses per feeder, counting the feeder head.
    pub buses_per_feeder: usize,
    pub ties: usize,
    pub dgs: usize,
    pub seed: u64,
    /// Total active load per feeder (kW).
    pub feeder_load_kw: f64,
    /// Feeder-head transformer rating as a multiple of the feeder's load (kVA),
    /// taken as three times its heaviest phase.
    pub head_capacity_factor: f64,
    /// Rating of every other physical edge as a multiple of the feeder's load.
    pub line_capacity_factor: f64,
    /// Probability that a line below the breaker is a sectionalizing switch.
    pub switch_fraction: f64,
    pub switchable_load_fraction: f64,
    pub single_phase_fraction: f64,
    /// DG active capacity as a fraction of one feeder's load.
    pub dg_capacity_fraction: f64,
    /// Attach the default CLPU class (built for this many sub-steps) to every load.
    pub clpu_substeps: Option<usize>,
    /// Insert a gang-operated regulator between each feeder head and its breaker.
    pub regulators: bool,
    pub segment_miles: (f64, f64),
}

impl SynthSpec {
    pub fn new(
        feeders: usize,
        buses_per_feeder: usize,
        ties: usize,
        dgs: usize,
        seed: u64,
    ) -> Self {
        SynthSpec {
            feeders,
            buses_per_feeder,
            ties,
            dgs,
            seed,
            feeder_load_kw: 1500.0,
            head_capacity_factor: 1.4,
            line_capacity_factor: 3.0,
            switch_fraction: 0.3,
            switchable_load_fraction: 0.0,
            single_phase_fraction: 0.2,
            dg_capacity_fraction: 0.5,
            clpu_substeps: None,
            regulators: false,
            segment_miles: (0.05, 0.25),
        }
    }
}

struct FeederBus {
    idx: usize,
    phases: PhaseSet,
}

/// Builds a multi-feeder network: one source bus, a transformer and breaker
/// per feeder, a random radial tree per feeder, open tie switches between
/// three-phase buses of distinct feeders and grid-forming DGs with their
/// virtual edges.
pub fn synth_multifeeder(spec: &SynthSpec) -> Result<NetworkModel, NetworkError> {
    if spec.feeders == 0 || spec.buses_per_feeder < 2 {
        return Err(NetworkError::Invariant(
            "synth needs at least one feeder with at least two buses".into(),
        ));
    }
    if spec.ties > 0 && spec.feeders < 2 {
        return Err(NetworkError::Invariant(
            "tie switches need at least two feeders".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut doc = NetworkDocument {
        schema_version: SCHEMA_VERSION,
        name: format!(
            "synth-{}x{}-t{}-d{}-s{}",
            spec.feeders, spec.buses_per_feeder, spec.ties, spec.dgs, spec.seed
        ),
        base_kva: BASE_KVA,
        buses: vec![bus("src", PhaseSet::ABC)],
        edges: Vec::new(),
        dgs: Vec::new(),
        regulators: Vec::new(),
        capacitors: Vec::new(),
        clpu: Vec::new(),
    };
    doc.buses[0].is_source = true;
    if let Some(substeps) = spec.clpu_substeps {
        doc.clpu
            .push(ClpuParams::default_class("default", substeps));
    }

    let feeder_kva = spec.feeder_load_kw / POWER_FACTOR;
    let line_rating = spec.line_capacity_factor * feeder_kva;
    let tan_phi = POWER_FACTOR.acos().tan();
    let mut feeders: Vec<Vec<FeederBus>> = Vec::new();

    for f in 1..=spec.feeders {
        let head = format!("f{f}_h");
        doc.buses.push(bus(&head, PhaseSet::ABC));
        let xfmr = doc.edges.len();
        doc.edges.push(Edge {
            id: format!("f{f}_xfmr"),
            from: "src".into(),
            to: head.clone(),
            kind: EdgeKind::Transformer,
            phases: PhaseSet::ABC,
            normal_closed: true,
            r: diag(0.3),
            x: diag(1.5),
            s_rated: spec.head_capacity_factor * feeder_kva,
        });
        let mut upstream = head.clone();
        if spec.regulators {
            let reg_bus = format!("f{f}_r");
            doc.buses.push(bus(&reg_bus, PhaseSet::ABC));
            let id = format!("f{f}_reg");
            doc.edges.push(Edge {
                id: id.clone(),
                from: head.clone(),
                to: reg_bus.clone(),
                kind: EdgeKind::Regulator,
                phases: PhaseSet::ABC,
                normal_closed: true,
                r: [[0.0; 3]; 3],
                x: [[0.0; 3]; 3],
                s_rated: line_rating,
            });
            doc.regulators.push(Regulator {
                edge: id,
                gang: true,
                taps: [NEUTRAL_TAP; 3],
            });
            upstream = reg_bus;
        }

        let mut members = vec![FeederBus {
            idx: doc.buses.len(),
            phases: PhaseSet::ABC,
        }];
        doc.buses.push(bus(&format!("f{f}_1"), PhaseSet::ABC));
        doc.edges.push(Edge {
            id: format!("f{f}_brk"),
            from: upstream,
            to: format!("f{f}_1"),
            kind: EdgeKind::SectionalizingSwitch,
            phases: PhaseSet::ABC,
            normal_closed: true,
            r: scale(&R_3PH, 0.05),
            x: scale(&X_3PH, 0.05),
            s_rated: line_rating,
        });

        for n in 2..spec.buses_per_feeder {
            let parent = &members[rng.gen_range(0..members.len())];
            let parent_idx = parent.idx;
            let phases = if parent.phases.len() == 1 {
                parent.phases
            } else if rng.gen_bool(spec.single_phase_fraction.clamp(0.0, 1.0)) {
                PhaseSet::single(Phase::ALL[rng.gen_range(0..3)])
            } else {
                PhaseSet::ABC
            };
            let id = format!("f{f}_{n}");
            doc.buses.push(bus(&id, phases));
            let miles = rng.gen_range(spec.segment_miles.0..=spec.segment_miles.1);
            let (r, x) = line_impedance(phases, miles);
            let switched = rng.gen_bool(spec.switch_fraction.clamp(0.0, 1.0));
            doc.edges.push(Edge {
                id: format!("f{f}_{}{n}", if switched { "s" } else { "l" }),
                from: doc.buses[parent_idx].id.clone(),
                to: id,
                kind: if switched {
                    EdgeKind::SectionalizingSwitch
                } else {
                    EdgeKind::PlainLine
                },
                phases,
                normal_closed: true,
                r,
                x,
                s_rated: line_rating,
            });
            members.push(FeederBus {
                idx: doc.buses.len() - 1,
                phases,
            });
        }

        // Spread the feeder's load over its buses with random shares.
        let shares: Vec<f64> = members.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = shares.iter().sum();
        for (m, share) in members.iter().zip(&shares) {
            let kw = spec.feeder_load_kw * share / total;
            let b = &mut doc.buses[m.idx];
            let n = m.phases.len() as f64;
            for p in m.phases.indices() {
                let imbalance = if n > 1.0 {
                    rng.gen_range(0.9..1.1)
                } else {
                    1.0
                };
                b.load_p[p] = round3(kw / n * imbalance);
                b.load_q[p] = round3(b.load_p[p] * tan_phi);
            }
            b.load_switchable = rng.gen_bool(spec.switchable_load_fraction.clamp(0.0, 1.0));
            if spec.clpu_substeps.is_some() {
                b.clpu = Some("default".into());
            }
        }
        let mut phase_kw = [0.0; 3];
        for m in &members {
            for p in 0..3 {
                phase_kw[p] += doc.buses[m.idx].load_p[p];
            }
        }
        let heaviest = phase_kw.iter().copied().fold(0.0, f64::max);
        doc.edges[xfmr].s_rated = spec.head_capacity_factor * 3.0 * heaviest / POWER_FACTOR;
        feeders.push(members);
    }

    add_ties(spec, &mut rng, &mut doc, &feeders, line_rating)?;
    add_dgs(spec, &mut rng, &mut doc, &feeders)?;
    NetworkModel::from_document(doc)
}

fn add_ties(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    doc: &mut NetworkDocument,
    feeders: &[Vec<FeederBus>],
    rating: f64,
) -> Result<(), NetworkError> {
    let three_phase: Vec<Vec<usize>> = feeders
        .iter()
        .map(|m| {
            m.iter()
                .filter(|b| b.phases == PhaseSet::ABC)
                .map(|b| b.idx)
                .collect()
        })
        .collect();
    let mut candidates = Vec::new();
    for a in 0..feeders.len() {
        for b in a + 1..feeders.len() {
            for &i in &three_phase[a] {
                for &j in &three_phase[b] {
                    candidates.push((a, b, i, j));
                }
            }
        }
    }
    if spec.ties > candidates.len() {
        return Err(NetworkError::Invariant(format!(
            "{} ties requested but only {} feeder-to-feeder bus pairs exist",
            spec.ties,
            candidates.len()
        )));
    }
    // Visit feeder pairs round-robin so ties spread over the network.
    let mut pairs: Vec<(usize, usize)> = candidates.iter().map(|c| (c.0, c.1)).collect();
    pairs.dedup();
    let mut used = BTreeSet::new();
    let mut made = 0;
    let mut round = 0;
    while made < spec.ties {
        let (a, b) = pairs[round % pairs.len()];
        round += 1;
        let free: Vec<_> = candidates
            .iter()
            .filter(|c| c.0 == a && c.1 == b && !used.contains(&(c.2, c.3)))
            .collect();
        let Some(&&(_, _, i, j)) = free.choose(rng) else {
            continue;
        };
        used.insert((i, j));
        made += 1;
        let (r, x) = line_impedance(PhaseSet::ABC, 0.2);
        doc.edges.push(Edge {
            id: format!("tie{made}"),
            from: doc.buses[i].id.clone(),
            to: doc.buses[j].id.clone(),
            kind: EdgeKind::TieSwitch,
            phases: PhaseSet::ABC,
            normal_closed: false,
            r,
            x,
            s_rated: rating,
        });
    }
    Ok(())
}

fn add_dgs(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    doc: &mut NetworkDocument,
    feeders: &[Vec<FeederBus>],
) -> Result<(), NetworkError> {
    let mut pools: Vec<Vec<usize>> = feeders
        .iter()
        .map(|m| {
            m.iter()
                .skip(1)
                .filter(|b| b.phases == PhaseSet::ABC)
                .map(|b| b.idx)
                .collect()
        })
        .collect();
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let available: usize = pools.iter().map(Vec::len).sum();
    if spec.dgs > available {
        return Err(NetworkError::Invariant(format!(
            "{} DGs requested but only {available} eligible three-phase buses exist",
            spec.dgs
        )));
    }
    let p_max = spec.dg_capacity_fraction * spec.feeder_load_kw;
    let mut made = 0;
    let mut f = 0;
    while made < spec.dgs {
        let n_pools = pools.len();
        let Some(bus_idx) = pools[f % n_pools].pop() else {
            f += 1;
            continue;
        };
        f += 1;
        made += 1;
        let bus_id = doc.buses[bus_idx].id.clone();
        doc.dgs.push(Dg {
            id: format!("dg{made}"),
            bus: bus_id.clone(),
            p_max: round3(p_max),
            q_max: round3(0.5 * p_max),
            grid_forming: true,
        });
        doc.edges.push(Edge {
            id: format!("vdg{made}"),
            from: "src".into(),
            to: bus_id,
            kind: EdgeKind::VirtualDgEdge,
            phases: PhaseSet::ABC,
            normal_closed: false,
            r: [[0.0; 3]; 3],
            x: [[0.0; 3]; 3],
            s_rated: 0.0,
        });
    }
    Ok(())
}

/// Isolation scenario for a fault on `edge`: the zone of buses reachable
/// from the faulted edge without crossing a switch is cut out. The boundary
/// switch on the path to the source is reported as tripped, every other
/// boundary switch (ties and virtual edges included) as an isolation switch.
pub fn isolate_fault(model: &NetworkModel, edge: usize) -> FaultScenario {
    let (a, b) = model.edge_endpoints(edge);
    let mut in_zone = vec![false; model.buses().len()];
    let mut queue = VecDeque::new();
    for start in [a, b] {
        if !model.bus(start).is_source && !in_zone[start] {
            in_zone[start] = true;
            queue.push_back(start);
        }
    }
    let mut boundary = BTreeSet::new();
    while let Some(u) = queue.pop_front() {
        for &k in model.incident_edges(u) {
            if k == edge {
                continue;
            }
            if model.is_switchable(k) {
                boundary.insert(k);
                continue;
            }
            let w = model.other_end(k, u);
            if !in_zone[w] && !model.bus(w).is_source {
                in_zone[w] = true;
                queue.push_back(w);
            }
        }
    }
    if model.is_switchable(edge) {
        boundary.insert(edge);
    }

    let upstream = upstream_edges(model);
    let tripped: BTreeSet<usize> = boundary
        .iter()
        .copied()
        .filter(|k| {
            let (f, t) = model.edge_endpoints(*k);
            model.edge(*k).normal_closed
                && [f, t]
                    .iter()
                    .any(|bus| in_zone[*bus] && upstream[*bus] == Some(*k))
        })
        .collect();
    let mut scenario = FaultScenario {
        description: format!("fault on {}", model.edge(edge).id),
        faulted_edges: vec![model.edge(edge).id.clone()],
        tripped_switches: tripped.iter().map(|k| model.edge(*k).id.clone()).collect(),
        isolation_switches: boundary
            .difference(&tripped)
            .map(|k| model.edge(*k).id.clone())
            .collect(),
    };
    scenario
        .isolation_switches
        .retain(|id| *id != model.edge(edge).id);
    scenario
}

/// Random single-fault scenario on a plain line.
pub fn synth_scenario(model: &NetworkModel, seed: u64) -> Option<FaultScenario> {
    let lines: Vec<usize> = (0..model.edges().len())
        .filter(|k| model.edge(*k).kind == EdgeKind::PlainLine)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lines.choose(&mut rng).map(|k| isolate_fault(model, *k))
}

/// Edge feeding each bus in the normal operating tree.
fn upstream_edges(model: &NetworkModel) -> Vec<Option<usize>> {
    let mut up = vec![None; model.buses().len()];
    let mut seen = vec![false; model.buses().len()];
    let mut queue: VecDeque<usize> = model.source_buses().collect();
    for s in &queue {
        seen[*s] = true;
    }
    while let Some(u) = queue.pop_front() {
        for &k in model.incident_edges(u) {
            if !model.edge(k).normal_closed {
                continue;
            }
            let w = model.other_end(k, u);
            if !seen[w] {
                seen[w] = true;
                up[w] = Some(k);
                queue.push_back(w);
            }
        }
    }
    up
}

fn bus(id: &str, phases: PhaseSet) -> Bus {
    Bus {
        id: id.to_string(),
        phases,
        base_kv: BASE_KV,
        load_p: [0.0; 3],
        load_q: [0.0; 3],
        weight: 1.0,
        load_switchable: false,
        clpu: None,
        is_source: false,
        source_voltage_pu: 1.0,
    }
}

fn line_impedance(phases: PhaseSet, miles: f64) -> (Matrix3, Matrix3) {
    if phases.len() == 1 {
        let p = phases.indices().next().expect("single phase");
        let mut r = [[0.0; 3]; 3];
        let mut x = [[0.0; 3]; 3];
        r[p][p] = R_1PH * miles;
        x[p][p] = X_1PH * miles;
        (r, x)
    } else {
        (scale(&R_3PH, miles), scale(&X_3PH, miles))
    }
}

fn scale(m: &Matrix3, k: f64) -> Matrix3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[i][j] * k;
        }
    }
    out
}

fn diag(v: f64) -> Matrix3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = v;
    }
    out
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}
