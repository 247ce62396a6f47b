//! Power-flow evaluators over a fixed radial topology: the lossless
//! linearized three-phase model used inside the MILP, and a nonlinear
//! backward/forward sweep used as an independent check.

mod linear;
mod sweep;

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::netmodel::{tap_ratio, EdgeKind, Matrix3, NetworkModel};

pub use linear::linear_pf;
pub use sweep::{sweep_pf, SweepOptions};

#[derive(Debug, thiserror::Error)]
pub enum PowerFlowError {
    #[error("topology is not radial: edge `{0}` closes a loop")]
    NotRadial(String),
    #[error(
        "sweep did not converge within {iterations} iterations (last mismatch {mismatch:.3e} pu)"
    )]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("operating point does not match the network: {0}")]
    Shape(String),
}

/// Everything needed to evaluate one operating state.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    pub closed: Vec<bool>,
    /// Served demand per bus and phase.
    pub p_kw: Vec<[f64; 3]>,
    pub q_kvar: Vec<[f64; 3]>,
    /// Tap positions per regulator, 1-based.
    pub taps: Vec<[usize; 3]>,
    /// Capacitor status per bank and phase.
    pub caps: Vec<[bool; 3]>,
    /// Squared voltage set-point of each DG acting as island slack.
    pub dg_slack_u: Vec<f64>,
}

impl OperatingPoint {
    /// Normal-state devices, no load, every DG slack at 1 pu.
    pub fn unloaded(model: &NetworkModel, closed: Vec<bool>) -> Self {
        OperatingPoint {
            closed,
            p_kw: vec![[0.0; 3]; model.buses().len()],
            q_kvar: vec![[0.0; 3]; model.buses().len()],
            taps: model.regulators().iter().map(|r| r.taps).collect(),
            caps: model
                .capacitors()
                .iter()
                .map(|c| [c.initially_on; 3])
                .collect(),
            dg_slack_u: vec![1.0; model.dgs().len()],
        }
    }

    /// Sets each listed bus to serve `factor` times its nominal load.
    pub fn serve(&mut self, model: &NetworkModel, bus: usize, factor: f64) {
        let b = model.bus(bus);
        for p in 0..3 {
            self.p_kw[bus][p] = b.load_p[p] * factor;
            self.q_kvar[bus][p] = b.load_q[p] * factor;
        }
    }

    fn check_shape(&self, model: &NetworkModel) -> Result<(), PowerFlowError> {
        let ok = self.closed.len() == model.edges().len()
            && self.p_kw.len() == model.buses().len()
            && self.q_kvar.len() == model.buses().len()
            && self.taps.len() == model.regulators().len()
            && self.caps.len() == model.capacitors().len()
            && self.dg_slack_u.len() == model.dgs().len();
        if ok {
            Ok(())
        } else {
            Err(PowerFlowError::Shape(
                "vector lengths differ from the model".into(),
            ))
        }
    }
}

/// Result of a power-flow evaluation. Flows are measured at the sending
/// (`from`) end of each edge in the edge's own orientation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowState {
    pub p_kw: Vec<[f64; 3]>,
    pub q_kvar: Vec<[f64; 3]>,
    /// Squared voltage magnitude (pu²), zero for de-energized phases.
    pub u: Vec<[f64; 3]>,
    /// Voltage magnitude (pu).
    pub v: Vec<[f64; 3]>,
    pub energized: Vec<bool>,
    /// Phases of each bus actually reached by a supplying edge.
    pub supplied: Vec<[bool; 3]>,
    pub iterations: usize,
}

impl FlowState {
    pub fn min_voltage(&self) -> Option<f64> {
        self.v
            .iter()
            .zip(&self.supplied)
            .flat_map(|(v, s)| (0..3).filter(|p| s[*p]).map(move |p| v[p]))
            .reduce(f64::min)
    }
}

/// Composite resistance/reactance matrices of the lossless three-phase
/// branch model, in per unit.
pub fn composite_impedance(r: &Matrix3, x: &Matrix3) -> (Matrix3, Matrix3) {
    let alpha = [
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(1.0, -2.0 * PI / 3.0),
        Complex64::from_polar(1.0, 2.0 * PI / 3.0),
    ];
    let mut rt = [[0.0; 3]; 3];
    let mut xt = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let g = alpha[i] * alpha[j].conj();
            rt[i][j] = g.re * r[i][j] + g.im * x[i][j];
            xt[i][j] = g.re * x[i][j] - g.im * r[i][j];
        }
    }
    (rt, xt)
}

/// Per-phase turns ratio of a regulator edge, 1.0 for any other edge.
pub(crate) fn edge_ratio(model: &NetworkModel, point: &OperatingPoint, edge: usize) -> [f64; 3] {
    match model.regulator_index(edge) {
        Some(k) => point.taps[k].map(tap_ratio),
        None => [1.0; 3],
    }
}

/// Breadth-first spanning structure of the closed, non-virtual edges from
/// every slack bus: source buses and DG buses whose virtual edge is closed.
pub(crate) struct Tree {
    /// Buses in visiting order (parents before children).
    pub order: Vec<usize>,
    /// `(edge, parent)` for each non-root visited bus.
    pub parent: Vec<Option<(usize, usize)>>,
    pub visited: Vec<bool>,
    /// Slack buses with their squared voltage set-points.
    pub roots: Vec<(usize, f64)>,
}

pub(crate) fn build_tree(
    model: &NetworkModel,
    point: &OperatingPoint,
) -> Result<Tree, PowerFlowError> {
    let n = model.buses().len();
    let mut roots: Vec<(usize, f64)> = model
        .source_buses()
        .map(|b| {
            let v = model.bus(b).source_voltage_pu;
            (b, v * v)
        })
        .collect();
    for (d, dg) in model.dgs().iter().enumerate() {
        if let Some(k) = model.virtual_edge_of_dg(d) {
            if point.closed[k] {
                roots.push((
                    model.bus_index(&dg.bus).expect("dg bus"),
                    point.dg_slack_u[d],
                ));
            }
        }
    }
    let mut visited = vec![false; n];
    let mut parent = vec![None; n];
    let mut order = Vec::with_capacity(n);
    let mut used = vec![false; model.edges().len()];
    let mut queue = VecDeque::new();
    for (b, _) in &roots {
        if visited[*b] {
            return Err(PowerFlowError::NotRadial(format!(
                "slack bus `{}` fed twice",
                model.bus(*b).id
            )));
        }
        visited[*b] = true;
        order.push(*b);
        queue.push_back(*b);
    }
    while let Some(u) = queue.pop_front() {
        for &k in model.incident_edges(u) {
            if !point.closed[k] || used[k] || model.edge(k).kind == EdgeKind::VirtualDgEdge {
                continue;
            }
            used[k] = true;
            let w = model.other_end(k, u);
            if visited[w] {
                return Err(PowerFlowError::NotRadial(model.edge(k).id.clone()));
            }
            visited[w] = true;
            parent[w] = Some((k, u));
            order.push(w);
            queue.push_back(w);
        }
    }
    // Closed edges inside floating components must not form loops either.
    let mut uf = crate::topology::UnionFind::new(n);
    for k in 0..model.edges().len() {
        if point.closed[k] && model.edge(k).kind != EdgeKind::VirtualDgEdge {
            let (a, b) = model.edge_endpoints(k);
            if !visited[a] && !uf.union(a, b) {
                return Err(PowerFlowError::NotRadial(model.edge(k).id.clone()));
            }
        }
    }
    Ok(Tree {
        order,
        parent,
        visited,
        roots,
    })
}

/// Kind of limit breached.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnderVoltage {
        bus: String,
        phase: char,
        v_pu: f64,
    },
    OverVoltage {
        bus: String,
        phase: char,
        v_pu: f64,
    },
    Thermal {
        edge: String,
        phase: char,
        s_kva: f64,
        rating_kva: f64,
    },
    UnsuppliedLoad {
        bus: String,
        phase: char,
    },
}

/// Slack allowed on every limit check: pu² for voltages, relative for ratings.
pub const LIMIT_TOL: f64 = 1e-6;

/// Voltage box on energized, supplied bus phases and the exact circular
/// apparent-power rating per phase on every rated physical edge.
pub fn check_limits(
    flow: &FlowState,
    model: &NetworkModel,
    u_min: f64,
    u_max: f64,
) -> Vec<Violation> {
    check_limits_with(flow, model, u_min, u_max, 1.0)
}

/// As [`check_limits`] with feeder-head (source-adjacent) ratings scaled.
pub fn check_limits_with(
    flow: &FlowState,
    model: &NetworkModel,
    u_min: f64,
    u_max: f64,
    head_cap: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, bus) in model.buses().iter().enumerate() {
        if !flow.energized[i] {
            continue;
        }
        for p in bus.phases.indices() {
            if !flow.supplied[i][p] {
                continue;
            }
            let u = flow.u[i][p];
            let phase = crate::netmodel::Phase::ALL[p].letter();
            if u < u_min - LIMIT_TOL {
                out.push(Violation::UnderVoltage {
                    bus: bus.id.clone(),
                    phase,
                    v_pu: u.sqrt(),
                });
            } else if u > u_max + LIMIT_TOL {
                out.push(Violation::OverVoltage {
                    bus: bus.id.clone(),
                    phase,
                    v_pu: u.sqrt(),
                });
            }
        }
    }
    for (k, edge) in model.edges().iter().enumerate() {
        if edge.kind.is_virtual() || edge.s_rated <= 0.0 {
            continue;
        }
        let mut rating = model.phase_rating_kva(k);
        if model.is_source_adjacent(k) {
            rating *= head_cap;
        }
        for p in edge.phases.indices() {
            let s = flow.p_kw[k][p].hypot(flow.q_kvar[k][p]);
            if s > rating * (1.0 + LIMIT_TOL) + LIMIT_TOL {
                out.push(Violation::Thermal {
                    edge: edge.id.clone(),
                    phase: crate::netmodel::Phase::ALL[p].letter(),
                    s_kva: s,
                    rating_kva: rating,
                });
            }
        }
    }
    out
}

/// Served demand on phases that no closed edge supplies.
pub(crate) fn unsupplied_loads(
    model: &NetworkModel,
    point: &OperatingPoint,
    flow: &FlowState,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, bus) in model.buses().iter().enumerate() {
        for p in 0..3 {
            let has = point.p_kw[i][p] != 0.0 || point.q_kvar[i][p] != 0.0;
            if has && !(flow.energized[i] && flow.supplied[i][p]) {
                out.push(Violation::UnsuppliedLoad {
                    bus: bus.id.clone(),
                    phase: crate::netmodel::Phase::ALL[p].letter(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
