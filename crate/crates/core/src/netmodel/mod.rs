//! Network data model: buses, multi-phase edges, DGs, regulators,
//! capacitor banks and CLPU classes, plus file ingestion and validation.
//!
//! A [`NetworkModel`] is immutable once built. Every constructor path runs
//! the full validation, so downstream modules can rely on resolved
//! cross-references, consistent phase sets and a radial, connected normal
//! operating state.

mod phase;
mod scenario;
mod synth;
mod types;

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub use phase::{ParsePhaseError, Phase, PhaseSet};
pub use scenario::{FaultScenario, ScenarioDocument, ScenarioOptions};
pub use synth::{isolate_fault, synth_multifeeder, synth_scenario, SynthSpec};
pub use types::{
    tap_ratio, Bus, CapacitorBank, ClpuParams, Dg, Edge, EdgeKind, Matrix3, NetworkDocument,
    Regulator, NEUTRAL_TAP, SCHEMA_VERSION, TAP_MIN_RATIO, TAP_POSITIONS, TAP_STEP,
};

use crate::topology::UnionFind;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{owner} refers to unknown {kind} `{id}`")]
    DanglingReference {
        owner: String,
        kind: &'static str,
        id: String,
    },
    #[error("phase inconsistency: {0}")]
    Phase(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("cycle without any switch: {}", .0.join(", "))]
    SwitchlessCycle(Vec<String>),
    #[error("normal operating state is not radial: edge `{0}` closes a loop")]
    NormalStateNotRadial(String),
    #[error("buses not energized in the normal operating state: {}", .0.join(", "))]
    Disconnected(Vec<String>),
}

/// Validated, immutable distribution network.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    doc: NetworkDocument,
    bus_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    incident: Vec<Vec<usize>>,
    regulator_of_edge: Vec<Option<usize>>,
    capacitor_of_bus: Vec<Option<usize>>,
    dg_of_bus: Vec<Option<usize>>,
    virtual_edge_of_dg: Vec<Option<usize>>,
    clpu_of_bus: Vec<Option<usize>>,
    vertex_of_bus: Vec<usize>,
    n_vertices: usize,
    feeder_of_bus: Vec<Option<usize>>,
}

/// Read and validate a network JSON file.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel, NetworkError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    NetworkModel::from_json(&text)
}

impl NetworkModel {
    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let doc: NetworkDocument =
            serde_json::from_str(text).map_err(|e| NetworkError::Schema(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("network document serializes")
    }

    pub fn document(&self) -> &NetworkDocument {
        &self.doc
    }

    pub fn into_document(self) -> NetworkDocument {
        self.doc
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self, NetworkError> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(NetworkError::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        if !(doc.base_kva > 0.0) {
            return Err(NetworkError::Schema("base_kva must be > 0".into()));
        }

        let bus_index = index_ids("bus", doc.buses.iter().map(|b| b.id.as_str()))?;
        let edge_index = index_ids("edge", doc.edges.iter().map(|e| e.id.as_str()))?;
        index_ids("dg", doc.dgs.iter().map(|d| d.id.as_str()))?;
        let clpu_index = index_ids("clpu", doc.clpu.iter().map(|c| c.id.as_str()))?;

        for params in &doc.clpu {
            params.validate().map_err(NetworkError::Invariant)?;
        }

        let mut clpu_of_bus = vec![None; doc.buses.len()];
        for (i, bus) in doc.buses.iter().enumerate() {
            validate_bus(bus)?;
            if let Some(class) = &bus.clpu {
                let idx = clpu_index
                    .get(class)
                    .ok_or_else(|| NetworkError::DanglingReference {
                        owner: format!("bus `{}`", bus.id),
                        kind: "clpu class",
                        id: class.clone(),
                    })?;
                clpu_of_bus[i] = Some(*idx);
            }
        }
        if !doc.buses.iter().any(|b| b.is_source) {
            return Err(NetworkError::Invariant("network has no source bus".into()));
        }

        let mut incident = vec![Vec::new(); doc.buses.len()];
        for (k, edge) in doc.edges.iter().enumerate() {
            let from = lookup(&bus_index, &edge.from, || format!("edge `{}`", edge.id))?;
            let to = lookup(&bus_index, &edge.to, || format!("edge `{}`", edge.id))?;
            if from == to {
                return Err(NetworkError::Invariant(format!(
                    "edge `{}` connects bus `{}` to itself",
                    edge.id, edge.from
                )));
            }
            validate_edge(edge, &doc.buses[from], &doc.buses[to])?;
            incident[from].push(k);
            incident[to].push(k);
        }

        let mut dg_of_bus = vec![None; doc.buses.len()];
        for (k, dg) in doc.dgs.iter().enumerate() {
            let bus = lookup(&bus_index, &dg.bus, || format!("dg `{}`", dg.id))?;
            if !(dg.p_max > 0.0) || !(dg.q_max >= 0.0) {
                return Err(NetworkError::Invariant(format!(
                    "dg `{}`: p_max must be > 0 and q_max >= 0",
                    dg.id
                )));
            }
            if doc.buses[bus].is_source {
                return Err(NetworkError::Invariant(format!(
                    "dg `{}` sits on source bus `{}`",
                    dg.id, dg.bus
                )));
            }
            if dg_of_bus[bus].replace(k).is_some() {
                return Err(NetworkError::Invariant(format!(
                    "bus `{}` hosts more than one DG",
                    dg.bus
                )));
            }
        }

        // Each grid-forming DG owns exactly one virtual edge; every virtual
        // edge ends on a grid-forming DG bus.
        let mut virtual_edge_of_dg = vec![None; doc.dgs.len()];
        for (k, edge) in doc.edges.iter().enumerate() {
            if edge.kind != EdgeKind::VirtualDgEdge {
                continue;
            }
            let to = bus_index[&edge.to];
            let dg = dg_of_bus[to]
                .filter(|d| doc.dgs[*d].grid_forming)
                .ok_or_else(|| {
                    NetworkError::Invariant(format!(
                        "virtual edge `{}` does not end on a grid-forming DG bus",
                        edge.id
                    ))
                })?;
            if virtual_edge_of_dg[dg].replace(k).is_some() {
                return Err(NetworkError::Invariant(format!(
                    "dg `{}` has more than one virtual edge",
                    doc.dgs[dg].id
                )));
            }
        }
        for (k, dg) in doc.dgs.iter().enumerate() {
            if dg.grid_forming && virtual_edge_of_dg[k].is_none() {
                return Err(NetworkError::Invariant(format!(
                    "grid-forming dg `{}` has no virtual edge",
                    dg.id
                )));
            }
        }

        let mut regulator_of_edge = vec![None; doc.edges.len()];
        for (k, reg) in doc.regulators.iter().enumerate() {
            let edge = lookup(&edge_index, &reg.edge, || "regulator".to_string())?;
            if doc.edges[edge].kind != EdgeKind::Regulator {
                return Err(NetworkError::Invariant(format!(
                    "regulator record points at edge `{}` which is not of kind regulator",
                    reg.edge
                )));
            }
            if reg.taps.iter().any(|t| *t == 0 || *t > TAP_POSITIONS) {
                return Err(NetworkError::Invariant(format!(
                    "regulator `{}`: tap positions must be within 1..={TAP_POSITIONS}",
                    reg.edge
                )));
            }
            if regulator_of_edge[edge].replace(k).is_some() {
                return Err(NetworkError::DuplicateId {
                    kind: "regulator",
                    id: reg.edge.clone(),
                });
            }
        }
        for (k, edge) in doc.edges.iter().enumerate() {
            if edge.kind == EdgeKind::Regulator && regulator_of_edge[k].is_none() {
                return Err(NetworkError::Invariant(format!(
                    "regulator edge `{}` has no regulator record",
                    edge.id
                )));
            }
        }

        let mut capacitor_of_bus = vec![None; doc.buses.len()];
        for (k, cap) in doc.capacitors.iter().enumerate() {
            let bus = lookup(&bus_index, &cap.bus, || "capacitor".to_string())?;
            let phases = doc.buses[bus].phases;
            for (idx, q) in cap.q_rated.iter().enumerate() {
                if *q < 0.0 {
                    return Err(NetworkError::Invariant(format!(
                        "capacitor at `{}` has negative rating",
                        cap.bus
                    )));
                }
                if *q != 0.0 && !phases.contains_index(idx) {
                    return Err(NetworkError::Phase(format!(
                        "capacitor at `{}` rated on phase {} which the bus lacks",
                        cap.bus,
                        Phase::ALL[idx]
                    )));
                }
            }
            if capacitor_of_bus[bus].replace(k).is_some() {
                return Err(NetworkError::Invariant(format!(
                    "bus `{}` has more than one capacitor bank",
                    cap.bus
                )));
            }
        }

        let mut vertex_of_bus = vec![0; doc.buses.len()];
        let mut n_vertices = 1;
        for (i, bus) in doc.buses.iter().enumerate() {
            if !bus.is_source {
                vertex_of_bus[i] = n_vertices;
                n_vertices += 1;
            }
        }

        let mut model = NetworkModel {
            doc,
            bus_index,
            edge_index,
            incident,
            regulator_of_edge,
            capacitor_of_bus,
            dg_of_bus,
            virtual_edge_of_dg,
            clpu_of_bus,
            vertex_of_bus,
            n_vertices,
            feeder_of_bus: Vec::new(),
        };
        model.check_switchless_cycles()?;
        model.check_normal_state()?;
        model.feeder_of_bus = model.assign_feeders();
        Ok(model)
    }

    fn check_switchless_cycles(&self) -> Result<(), NetworkError> {
        let mut uf = UnionFind::new(self.n_vertices);
        for (k, edge) in self.doc.edges.iter().enumerate() {
            if edge.kind.is_switchable() {
                continue;
            }
            let (u, v) = self.edge_vertices(k);
            if !uf.union(u, v) {
                let cycle = crate::topology::cycle_through_edge(self, k, |e| {
                    !self.doc.edges[e].kind.is_switchable()
                });
                return Err(NetworkError::SwitchlessCycle(cycle));
            }
        }
        Ok(())
    }

    fn check_normal_state(&self) -> Result<(), NetworkError> {
        let mut uf = UnionFind::new(self.n_vertices);
        for (k, edge) in self.doc.edges.iter().enumerate() {
            if !edge.normal_closed {
                continue;
            }
            let (u, v) = self.edge_vertices(k);
            if !uf.union(u, v) {
                return Err(NetworkError::NormalStateNotRadial(edge.id.clone()));
            }
        }
        let root = uf.find(0);
        let orphans: Vec<String> = self
            .doc
            .buses
            .iter()
            .enumerate()
            .filter(|(i, _)| uf.find(self.vertex_of_bus[*i]) != root)
            .map(|(_, b)| b.id.clone())
            .collect();
        if !orphans.is_empty() {
            return Err(NetworkError::Disconnected(orphans));
        }
        Ok(())
    }

    /// Walks the normal operating tree from every source and labels each
    /// bus with the head bus of the feeder that supplies it.
    fn assign_feeders(&self) -> Vec<Option<usize>> {
        let mut feeder = vec![None; self.doc.buses.len()];
        let mut seen = vec![false; self.doc.buses.len()];
        let mut queue = VecDeque::new();
        for (i, bus) in self.doc.buses.iter().enumerate() {
            if bus.is_source {
                seen[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(b) = queue.pop_front() {
            for &k in &self.incident[b] {
                let edge = &self.doc.edges[k];
                if !edge.normal_closed {
                    continue;
                }
                let other = self.other_end(k, b);
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                feeder[other] = if self.doc.buses[b].is_source {
                    Some(other)
                } else {
                    feeder[b]
                };
                queue.push_back(other);
            }
        }
        feeder
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn base_kva(&self) -> f64 {
        self.doc.base_kva
    }

    /// Per-phase power base (kVA).
    pub fn s_base_phase(&self) -> f64 {
        self.doc.base_kva / 3.0
    }

    pub fn buses(&self) -> &[Bus] {
        &self.doc.buses
    }

    pub fn edges(&self) -> &[Edge] {
        &self.doc.edges
    }

    pub fn dgs(&self) -> &[Dg] {
        &self.doc.dgs
    }

    pub fn regulators(&self) -> &[Regulator] {
        &self.doc.regulators
    }

    pub fn capacitors(&self) -> &[CapacitorBank] {
        &self.doc.capacitors
    }

    pub fn clpu_classes(&self) -> &[ClpuParams] {
        &self.doc.clpu
    }

    pub fn bus(&self, idx: usize) -> &Bus {
        &self.doc.buses[idx]
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.doc.edges[idx]
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn edge_endpoints(&self, edge: usize) -> (usize, usize) {
        let e = &self.doc.edges[edge];
        (self.bus_index[&e.from], self.bus_index[&e.to])
    }

    pub fn other_end(&self, edge: usize, bus: usize) -> usize {
        let (f, t) = self.edge_endpoints(edge);
        if f == bus {
            t
        } else {
            f
        }
    }

    pub fn incident_edges(&self, bus: usize) -> &[usize] {
        &self.incident[bus]
    }

    /// Graph vertex of a bus; every source bus maps to vertex 0.
    pub fn vertex_of_bus(&self, bus: usize) -> usize {
        self.vertex_of_bus[bus]
    }

    pub fn vertex_count(&self) -> usize {
        self.n_vertices
    }

    pub fn edge_vertices(&self, edge: usize) -> (usize, usize) {
        let (f, t) = self.edge_endpoints(edge);
        (self.vertex_of_bus[f], self.vertex_of_bus[t])
    }

    pub fn regulator_of_edge(&self, edge: usize) -> Option<&Regulator> {
        self.regulator_of_edge[edge].map(|k| &self.doc.regulators[k])
    }

    pub fn regulator_index(&self, edge: usize) -> Option<usize> {
        self.regulator_of_edge[edge]
    }

    pub fn regulator_edge(&self, reg: usize) -> usize {
        self.edge_index[&self.doc.regulators[reg].edge]
    }

    pub fn capacitor_of_bus(&self, bus: usize) -> Option<usize> {
        self.capacitor_of_bus[bus]
    }

    pub fn capacitor_bus(&self, cap: usize) -> usize {
        self.bus_index[&self.doc.capacitors[cap].bus]
    }

    pub fn dg_of_bus(&self, bus: usize) -> Option<&Dg> {
        self.dg_of_bus[bus].map(|k| &self.doc.dgs[k])
    }

    /// DG served by a virtual edge.
    pub fn dg_of_virtual_edge(&self, edge: usize) -> Option<&Dg> {
        let e = &self.doc.edges[edge];
        if e.kind != EdgeKind::VirtualDgEdge {
            return None;
        }
        self.dg_of_bus(self.bus_index[&e.to])
    }

    pub fn virtual_edge_of_dg(&self, dg: usize) -> Option<usize> {
        self.virtual_edge_of_dg[dg]
    }

    pub fn clpu_of_bus(&self, bus: usize) -> Option<&ClpuParams> {
        self.clpu_of_bus[bus].map(|k| &self.doc.clpu[k])
    }

    /// Head bus of the feeder supplying `bus` in the normal operating state.
    pub fn feeder_of_bus(&self, bus: usize) -> Option<usize> {
        self.feeder_of_bus[bus]
    }

    pub fn feeder_heads(&self) -> Vec<usize> {
        let mut heads: Vec<usize> = self.feeder_of_bus.iter().flatten().copied().collect();
        heads.sort_unstable();
        heads.dedup();
        heads
    }

    pub fn is_switchable(&self, edge: usize) -> bool {
        self.doc.edges[edge].kind.is_switchable()
    }

    pub fn switchable_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.doc.edges.len()).filter(|k| self.is_switchable(*k))
    }

    /// Edge leaving a source bus (feeder head transformer or breaker).
    pub fn is_source_adjacent(&self, edge: usize) -> bool {
        let e = &self.doc.edges[edge];
        if e.kind.is_virtual() {
            return false;
        }
        let (f, t) = self.edge_endpoints(edge);
        self.doc.buses[f].is_source || self.doc.buses[t].is_source
    }

    pub fn source_buses(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.doc.buses.len()).filter(|i| self.doc.buses[*i].is_source)
    }

    /// Impedance base (ohm) referred to the sending bus of an edge.
    pub fn z_base_ohm(&self, edge: usize) -> f64 {
        let (f, _) = self.edge_endpoints(edge);
        let kv = self.doc.buses[f].base_kv;
        kv * kv * 1000.0 / self.doc.base_kva
    }

    /// Series impedance in per unit, `(r, x)`.
    pub fn impedance_pu(&self, edge: usize) -> (Matrix3, Matrix3) {
        let zb = self.z_base_ohm(edge);
        let e = &self.doc.edges[edge];
        let mut r = [[0.0; 3]; 3];
        let mut x = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = e.r[i][j] / zb;
                x[i][j] = e.x[i][j] / zb;
            }
        }
        (r, x)
    }

    /// Per-phase apparent power rating in kVA.
    pub fn phase_rating_kva(&self, edge: usize) -> f64 {
        let e = &self.doc.edges[edge];
        e.s_rated / e.phases.len() as f64
    }

    pub fn total_load_kw(&self) -> f64 {
        self.doc.buses.iter().map(Bus::total_load_kw).sum()
    }

    pub fn load_buses(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.doc.buses.len()).filter(|i| self.doc.buses[*i].has_load())
    }

    /// Which edges are closed in the normal operating tree.
    pub fn normal_closed(&self) -> Vec<bool> {
        self.doc.edges.iter().map(|e| e.normal_closed).collect()
    }

    /// SHA-256 of the canonical JSON document, used to key cached cycles.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.doc).expect("network document serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

fn index_ids<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a str>,
) -> Result<HashMap<String, usize>, NetworkError> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if id.is_empty() {
            return Err(NetworkError::Schema(format!("{kind} #{i} has an empty id")));
        }
        if map.insert(id.to_string(), i).is_some() {
            return Err(NetworkError::DuplicateId {
                kind,
                id: id.to_string(),
            });
        }
    }
    Ok(map)
}

fn lookup(
    index: &HashMap<String, usize>,
    id: &str,
    owner: impl FnOnce() -> String,
) -> Result<usize, NetworkError> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| NetworkError::DanglingReference {
            owner: owner(),
            kind: "bus/edge",
            id: id.to_string(),
        })
}

fn validate_bus(bus: &Bus) -> Result<(), NetworkError> {
    if bus.phases.is_empty() {
        return Err(NetworkError::Phase(format!(
            "bus `{}` has no phases",
            bus.id
        )));
    }
    if !(bus.base_kv > 0.0) {
        return Err(NetworkError::Schema(format!(
            "bus `{}`: base_kv must be > 0",
            bus.id
        )));
    }
    if !(bus.weight >= 0.0) {
        return Err(NetworkError::Invariant(format!(
            "bus `{}`: weight must be >= 0",
            bus.id
        )));
    }
    for idx in 0..3 {
        let (p, q) = (bus.load_p[idx], bus.load_q[idx]);
        if !bus.phases.contains_index(idx) {
            if p != 0.0 || q != 0.0 {
                return Err(NetworkError::Phase(format!(
                    "bus `{}` carries load on phase {} which it lacks",
                    bus.id,
                    Phase::ALL[idx]
                )));
            }
        } else if p < 0.0 || q < 0.0 || !p.is_finite() || !q.is_finite() {
            return Err(NetworkError::Invariant(format!(
                "bus `{}`: loads must be finite and >= 0",
                bus.id
            )));
        }
    }
    if bus.is_source {
        if bus.has_load() {
            return Err(NetworkError::Invariant(format!(
                "source bus `{}` must not carry load",
                bus.id
            )));
        }
        if !(bus.source_voltage_pu > 0.0) {
            return Err(NetworkError::Invariant(format!(
                "source bus `{}`: source_voltage_pu must be > 0",
                bus.id
            )));
        }
    }
    Ok(())
}

fn validate_edge(edge: &Edge, from: &Bus, to: &Bus) -> Result<(), NetworkError> {
    if edge.phases.is_empty() {
        return Err(NetworkError::Phase(format!(
            "edge `{}` has no phases",
            edge.id
        )));
    }
    if !edge.phases.is_subset(from.phases) || !edge.phases.is_subset(to.phases) {
        return Err(NetworkError::Phase(format!(
            "edge `{}` phases `{}` are not a subset of `{}` ({}) and `{}` ({})",
            edge.id, edge.phases, from.id, from.phases, to.id, to.phases
        )));
    }
    for i in 0..3 {
        for j in 0..3 {
            let present = edge.phases.contains_index(i) && edge.phases.contains_index(j);
            let (r, x) = (edge.r[i][j], edge.x[i][j]);
            if !r.is_finite() || !x.is_finite() {
                return Err(NetworkError::Schema(format!(
                    "edge `{}`: impedance entries must be finite",
                    edge.id
                )));
            }
            if !present && (r != 0.0 || x != 0.0) {
                return Err(NetworkError::Phase(format!(
                    "edge `{}`: impedance entry [{i}][{j}] belongs to an absent phase",
                    edge.id
                )));
            }
        }
    }
    match edge.kind {
        EdgeKind::TieSwitch if edge.normal_closed => {
            return Err(NetworkError::Invariant(format!(
                "tie switch `{}` must be normally open",
                edge.id
            )))
        }
        EdgeKind::VirtualDgEdge if edge.normal_closed => {
            return Err(NetworkError::Invariant(format!(
                "virtual edge `{}` must be normally open",
                edge.id
            )))
        }
        EdgeKind::SectionalizingSwitch
        | EdgeKind::PlainLine
        | EdgeKind::Regulator
        | EdgeKind::Transformer
            if !edge.normal_closed =>
        {
            return Err(NetworkError::Invariant(format!(
                "{} `{}` must be normally closed",
                edge.kind.as_str(),
                edge.id
            )))
        }
        _ => {}
    }
    if edge.kind == EdgeKind::VirtualDgEdge {
        if !from.is_source {
            return Err(NetworkError::Invariant(format!(
                "virtual edge `{}` must start at a source bus",
                edge.id
            )));
        }
        let has_impedance = edge
            .r
            .iter()
            .chain(edge.x.iter())
            .flatten()
            .any(|v| *v != 0.0);
        if has_impedance {
            return Err(NetworkError::Invariant(format!(
                "virtual edge `{}` must carry no impedance",
                edge.id
            )));
        }
        if edge.phases != to.phases {
            return Err(NetworkError::Phase(format!(
                "virtual edge `{}` must carry every phase of DG bus `{}`",
                edge.id, to.id
            )));
        }
    } else if !(edge.s_rated > 0.0) {
        return Err(NetworkError::Invariant(format!(
            "edge `{}`: s_rated must be > 0",
            edge.id
        )));
    }
    if edge.kind == EdgeKind::Regulator {
        let has_impedance = edge
            .r
            .iter()
            .chain(edge.x.iter())
            .flatten()
            .any(|v| *v != 0.0);
        if has_impedance {
            return Err(NetworkError::Invariant(format!(
                "regulator `{}` is an ideal ratio and must carry no impedance",
                edge.id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
