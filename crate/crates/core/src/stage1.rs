//! Stage 1: the restored radial configuration. One MILP chooses switch
//! states, DG islands, served loads, regulator taps and capacitor statuses
//! for the settled post-restoration state.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::formulation::{EdgeSpec, Snapshot, SnapshotConfig};
use crate::milp::{
    self, LinExpr, MilpError, MilpModel, Relation, Sense, SolveOptions, SolveStats, SolveStatus,
    VarId,
};
use crate::netmodel::{EdgeKind, FaultScenario, NetworkError, NetworkModel};
use crate::powerflow::{check_limits_with, linear_pf, OperatingPoint, PowerFlowError, Violation};
use crate::topology::{is_radial_connected, Cycle, TopologyState};

/// Minimum service voltage (pu) used throughout.
pub const DEFAULT_V_MIN_PU: f64 = 0.9372;
pub const DEFAULT_V_MAX_PU: f64 = 1.05;
/// Largest allowed mismatch between decoded MILP values and the linear
/// power flow rebuilt from the decoded decisions.
pub const RECONSTRUCTION_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum Stage1Error {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("invalid options: {0}")]
    Options(String),
    #[error("stage-1 model is infeasible: {cause}")]
    Infeasible { cause: InfeasibleCause },
    #[error("time limit reached without a feasible solution")]
    NoIncumbent,
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("decoded solution failed verification: {0}")]
    Verification(String),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleCause {
    /// Buses tied to a source by non-switch edges cannot be supplied.
    IsolationLeavesNoSource,
    VoltageLimitsUnreachable,
    ThermalLimitsUnreachable,
    Unknown,
}

impl std::fmt::Display for InfeasibleCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = match self {
            InfeasibleCause::IsolationLeavesNoSource => "isolation leaves loads without a source",
            InfeasibleCause::VoltageLimitsUnreachable => "voltage limits unreachable",
            InfeasibleCause::ThermalLimitsUnreachable => "thermal limits unreachable",
            InfeasibleCause::Unknown => "no single relaxation restores feasibility",
        };
        f.write_str(text)
    }
}

/// Objective weights: `alpha` per weighted kW restored, `beta` per
/// sectionalizer opened or tie closed, `gamma` per DG island formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Smallest nonzero weighted bus load (kW).
    pub load_quantum_kw: f64,
}

impl ObjectiveWeights {
    /// Weights that keep every switching term below one load quantum.
    pub fn derive(model: &NetworkModel) -> Self {
        let quantum = model
            .buses()
            .iter()
            .map(|b| b.weight * b.total_load_kw())
            .filter(|w| *w > 0.0)
            .reduce(f64::min)
            .unwrap_or(1.0);
        let (n_s, n_t, n_v) = switch_counts(model);
        let n_switch = (n_s + n_t) as f64;
        let spread = 3.0 * n_t as f64 * n_v as f64 / (2.0 * n_switch + 1.0);
        let epsilon = (0.5 / (1.0 + spread)).min(0.5);
        let alpha = 1.0 / quantum;
        let beta = epsilon / (2.0 * n_switch + 1.0);
        let gamma = 2.0 * n_t as f64 * beta * (1.0 + epsilon);
        ObjectiveWeights {
            alpha,
            beta,
            gamma: gamma.max(beta * (1.0 + epsilon)),
            epsilon,
            load_quantum_kw: quantum,
        }
    }

    /// `alpha·quantum` exceeds the largest possible switching spread.
    pub fn dominance_holds(&self, model: &NetworkModel) -> bool {
        let (n_s, n_t, n_v) = switch_counts(model);
        self.alpha * self.load_quantum_kw
            > self.beta * 2.0 * (n_s + n_t) as f64 + self.gamma * n_v as f64
    }
}

fn switch_counts(model: &NetworkModel) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for e in model.edges() {
        match e.kind {
            EdgeKind::SectionalizingSwitch => counts.0 += 1,
            EdgeKind::TieSwitch => counts.1 += 1,
            EdgeKind::VirtualDgEdge => counts.2 += 1,
            _ => {}
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Options {
    /// Derived from the model when `None`.
    pub weights: Option<ObjectiveWeights>,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub allow_dg_islanding: bool,
    /// Fraction of the rating usable on feeder-head edges.
    pub feeder_loading_cap: f64,
    pub solve: SolveOptions,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Stage1Options {
            weights: None,
            v_min_pu: DEFAULT_V_MIN_PU,
            v_max_pu: DEFAULT_V_MAX_PU,
            allow_dg_islanding: true,
            feeder_loading_cap: 1.0,
            solve: SolveOptions::default(),
        }
    }
}

impl Stage1Options {
    pub fn u_min(&self) -> f64 {
        self.v_min_pu * self.v_min_pu
    }

    pub fn u_max(&self) -> f64 {
        self.v_max_pu * self.v_max_pu
    }

    pub fn validate(&self) -> Result<(), Stage1Error> {
        if !(self.v_min_pu > 0.0 && self.v_min_pu < self.v_max_pu) {
            return Err(Stage1Error::Options(format!(
                "voltage limits must satisfy 0 < v_min < v_max (got {} and {})",
                self.v_min_pu, self.v_max_pu
            )));
        }
        if !(self.feeder_loading_cap > 0.0) {
            return Err(Stage1Error::Options(
                "feeder loading cap must be > 0".into(),
            ));
        }
        if let Some(w) = &self.weights {
            if !(w.alpha > 0.0 && w.beta >= 0.0 && w.gamma >= 0.0) {
                return Err(Stage1Error::Options(
                    "objective weights must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn weights_for(&self, model: &NetworkModel) -> ObjectiveWeights {
        self.weights
            .unwrap_or_else(|| ObjectiveWeights::derive(model))
    }
}

/// Diversified demand factor of a bus in the settled state.
pub fn settled_factor(model: &NetworkModel, bus: usize) -> f64 {
    model.clpu_of_bus(bus).map_or(1.0, |c| c.s_d)
}

/// Whether a virtual edge may close under the options.
pub(crate) fn virtual_edge_usable(model: &NetworkModel, edge: usize, allow: bool) -> bool {
    allow
        && model
            .dg_of_virtual_edge(edge)
            .is_some_and(|dg| dg.grid_forming)
}

/// Edge states before optimization: forced-open edges open, other
/// switches free, everything else in service.
pub(crate) fn decision_edges(
    model: &NetworkModel,
    scenario: &FaultScenario,
    allow_dg: bool,
) -> Vec<Option<bool>> {
    let forced = scenario.forced_open(model);
    (0..model.edges().len())
        .map(|k| {
            let unusable = model.edge(k).kind == EdgeKind::VirtualDgEdge
                && !virtual_edge_usable(model, k, allow_dg);
            if forced[k] || unusable {
                Some(false)
            } else if model.is_switchable(k) {
                None
            } else {
                Some(true)
            }
        })
        .collect()
}

/// The built Stage-1 model with handles for decoding.
pub struct Stage1Model {
    pub milp: MilpModel,
    pub weights: ObjectiveWeights,
    pub(crate) snapshot: Snapshot,
    /// Load variable per bus (the energization binary for non-switchable loads).
    pub(crate) served: Vec<Option<VarId>>,
}

pub fn build_stage1(
    model: &NetworkModel,
    scenario: &FaultScenario,
    cycles: &[Cycle],
    options: &Stage1Options,
) -> Result<Stage1Model, Stage1Error> {
    options.validate()?;
    scenario.validate(model)?;
    let weights = options.weights_for(model);
    let mut milp = MilpModel::new();
    let mut edges = Vec::with_capacity(model.edges().len());
    for (k, fixed) in decision_edges(model, scenario, options.allow_dg_islanding)
        .into_iter()
        .enumerate()
    {
        edges.push(match fixed {
            Some(true) => EdgeSpec::Closed,
            Some(false) => EdgeSpec::Open,
            None => EdgeSpec::Var(milp.binary(format!("delta[{}]", model.edge(k).id))?),
        });
    }
    let scale_max = (0..model.buses().len())
        .map(|b| settled_factor(model, b))
        .fold(1.0, f64::max);
    let cfg = SnapshotConfig {
        tag: String::new(),
        edges,
        taps: None,
        caps: None,
        u_min: options.u_min(),
        u_max: options.u_max(),
        head_cap: options.feeder_loading_cap,
        demand_scale_max: scale_max,
        cycles,
    };
    let snapshot = Snapshot::declare(&mut milp, model, &cfg)?;

    let mut served = vec![None; model.buses().len()];
    let mut demand = vec![None; model.buses().len()];
    let mut objective = LinExpr::new();
    for (i, bus) in model.buses().iter().enumerate() {
        if bus.is_source || !bus.has_load() {
            continue;
        }
        let s = if bus.load_switchable {
            let s = milp.binary(format!("s[{}]", bus.id))?;
            milp.constrain(
                format!("sv[{}]", bus.id),
                LinExpr::var(s).with(snapshot.v[i], -1.0),
                Relation::Le,
                0.0,
            );
            s
        } else {
            snapshot.v[i]
        };
        served[i] = Some(s);
        demand[i] = Some(LinExpr::term(s, settled_factor(model, i)));
        objective.add(s, weights.alpha * bus.weight * bus.total_load_kw());
    }
    snapshot.constrain(&mut milp, model, &cfg, &demand)?;

    for (k, spec) in snapshot.edges.iter().enumerate() {
        let EdgeSpec::Var(d) = *spec else { continue };
        match model.edge(k).kind {
            EdgeKind::SectionalizingSwitch => {
                objective.add(d, weights.beta);
                objective.add_constant(-weights.beta);
            }
            EdgeKind::TieSwitch => {
                objective.add(d, -weights.beta);
            }
            EdgeKind::VirtualDgEdge => {
                objective.add(d, -weights.gamma);
            }
            _ => {}
        }
    }
    milp.set_objective(Sense::Maximize, objective);
    Ok(Stage1Model {
        milp,
        weights,
        snapshot,
        served,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SwitchOps {
    pub to_open: Vec<String>,
    pub to_close: Vec<String>,
}

impl SwitchOps {
    pub fn len(&self) -> usize {
        self.to_open.len() + self.to_close.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Switch actions leading from `from` to `to`, ids sorted.
pub fn switch_ops_between(model: &NetworkModel, from: &[bool], to: &[bool]) -> SwitchOps {
    let mut ops = SwitchOps::default();
    for k in model.switchable_edges() {
        let id = model.edge(k).id.clone();
        match (from[k], to[k]) {
            (true, false) => ops.to_open.push(id),
            (false, true) => ops.to_close.push(id),
            _ => {}
        }
    }
    ops.to_open.sort();
    ops.to_close.sort();
    ops
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stage1Solution {
    pub closed: Vec<bool>,
    /// Served flag per bus (false where there is no load).
    pub served: Vec<bool>,
    pub energized: Vec<bool>,
    pub taps: Vec<[usize; 3]>,
    pub caps: Vec<[bool; 3]>,
    pub dg_slack_u: Vec<f64>,
    pub p_kw: Vec<[f64; 3]>,
    pub q_kvar: Vec<[f64; 3]>,
    /// Squared voltage (pu²).
    pub u: Vec<[f64; 3]>,
    /// Total load served in the restored state.
    pub restored_kw: f64,
    pub weighted_restored_kw: f64,
    /// Load left unserved in the restored state.
    pub shed_kw: f64,
    /// Load interrupted right after isolation.
    pub outage_kw: f64,
    pub switch_ops: SwitchOps,
    pub objective: f64,
    pub weights: ObjectiveWeights,
    /// Islands formed, by DG id.
    pub dg_islands: Vec<String>,
    /// Exact-circle rating violations tolerated by the polygon.
    pub warnings: Vec<Violation>,
    pub stats: SolveStats,
    pub status: SolveStatus,
}

impl Stage1Solution {
    /// Operating point of the restored state with settled demand.
    pub fn operating_point(&self, model: &NetworkModel) -> OperatingPoint {
        let mut point = OperatingPoint::unloaded(model, self.closed.clone());
        for (i, served) in self.served.iter().enumerate() {
            if *served {
                point.serve(model, i, settled_factor(model, i));
            }
        }
        point.taps = self.taps.clone();
        point.caps = self.caps.clone();
        point.dg_slack_u = self.dg_slack_u.clone();
        point
    }
}

/// Load served when nothing is switched after isolation.
pub fn post_fault_served_kw(model: &NetworkModel, scenario: &FaultScenario) -> f64 {
    let state = TopologyState::post_fault(model, scenario);
    let report = is_radial_connected(model, &state);
    model
        .buses()
        .iter()
        .enumerate()
        .filter(|(i, _)| report.energized_buses.contains(i))
        .map(|(_, b)| b.total_load_kw())
        .sum()
}

pub fn solve_stage1(
    model: &NetworkModel,
    scenario: &FaultScenario,
    cycles: &[Cycle],
    options: &Stage1Options,
) -> Result<Stage1Solution, Stage1Error> {
    let built = build_stage1(model, scenario, cycles, options)?;
    let mut solve_opts = options.solve.clone();
    // Keep the optimality gap below the switching weights so ties among
    // equal-load plans are resolved by the secondary terms.
    let upper: f64 = model
        .buses()
        .iter()
        .map(|b| built.weights.alpha * b.weight * b.total_load_kw())
        .sum::<f64>()
        .max(1.0);
    let abs_gap = 0.25 * built.weights.beta.max(1e-9);
    solve_opts.mip_gap = solve_opts.mip_gap.min(abs_gap / upper);
    solve_opts.mip_abs_gap = Some(abs_gap);
    let result = milp::solve(&built.milp, &solve_opts)?;
    match result.status {
        SolveStatus::Optimal | SolveStatus::TimeLimit if result.has_solution() => {}
        SolveStatus::TimeLimit => return Err(Stage1Error::NoIncumbent),
        SolveStatus::Infeasible => {
            return Err(Stage1Error::Infeasible {
                cause: diagnose_infeasible(model, scenario, cycles, options),
            })
        }
        _ => return Err(Stage1Error::Solver(result.stats.detail.clone())),
    }
    let values = result.values.as_ref().expect("solution values");
    let mut solution = decode(
        model,
        scenario,
        &built,
        values,
        result.stats.clone(),
        result.status,
    )?;
    solution.warnings = verify(model, scenario, &solution, options)?;
    Ok(solution)
}

fn decode(
    model: &NetworkModel,
    scenario: &FaultScenario,
    built: &Stage1Model,
    values: &[f64],
    stats: SolveStats,
    status: SolveStatus,
) -> Result<Stage1Solution, Stage1Error> {
    let snap = &built.snapshot;
    let closed = snap.closed(values);
    let taps = snap.tap_positions(model, values, None);
    let caps = snap.cap_status(model, values, None);
    let mut dg_slack_u = vec![1.0; model.dgs().len()];
    let mut dg_islands = Vec::new();
    for (d, dg) in model.dgs().iter().enumerate() {
        if let Some(k) = model.virtual_edge_of_dg(d) {
            if closed[k] {
                let bus = model.bus_index(&dg.bus).expect("dg bus");
                let phase = model.bus(bus).phases.indices().next().expect("phases");
                dg_slack_u[d] = snap.u[bus][phase].map_or(1.0, |x| values[x.0]);
                dg_islands.push(dg.id.clone());
            }
        }
    }
    let served: Vec<bool> = built
        .served
        .iter()
        .map(|s| s.is_some_and(|s| values[s.0] > 0.5))
        .collect();
    let mut point = OperatingPoint::unloaded(model, closed.clone());
    point.taps = taps.clone();
    point.caps = caps.clone();
    point.dg_slack_u = dg_slack_u.clone();
    let flow = linear_pf(model, &point).map_err(|e| Stage1Error::Verification(e.to_string()))?;
    let energized = flow.energized.clone();
    // Floating components may be marked energized by the solver; they
    // carry no demand, so only reachable buses count as energized.
    let served: Vec<bool> = served
        .iter()
        .zip(&energized)
        .map(|(s, e)| *s && *e)
        .collect();
    let (p_kw, q_kvar) = snap.flows_kw(model, values);
    let mut u = snap.voltages(values);
    for (i, row) in u.iter_mut().enumerate() {
        if !energized[i] {
            *row = [0.0; 3];
        }
    }
    let mut restored_kw = 0.0;
    let mut weighted = 0.0;
    for (i, bus) in model.buses().iter().enumerate() {
        if served[i] {
            restored_kw += bus.total_load_kw();
            weighted += bus.weight * bus.total_load_kw();
        }
    }
    let total = model.total_load_kw();
    let post_closed = scenario.post_fault_closed(model);
    Ok(Stage1Solution {
        switch_ops: switch_ops_between(model, &post_closed, &closed),
        closed,
        served,
        energized,
        taps,
        caps,
        dg_slack_u,
        p_kw,
        q_kvar,
        u,
        restored_kw,
        weighted_restored_kw: weighted,
        shed_kw: total - restored_kw,
        outage_kw: total - post_fault_served_kw(model, scenario),
        objective: built.milp.objective().eval(values),
        weights: built.weights,
        dg_islands,
        warnings: Vec::new(),
        stats,
        status,
    })
}

/// Re-checks a decoded solution with the topology and power-flow
/// evaluators. Returns the exact-circle rating violations, which the
/// polygon admits.
pub fn verify(
    model: &NetworkModel,
    scenario: &FaultScenario,
    solution: &Stage1Solution,
    options: &Stage1Options,
) -> Result<Vec<Violation>, Stage1Error> {
    let state = TopologyState::post_fault(model, scenario);
    let state = TopologyState {
        closed: solution.closed.clone(),
        ..state
    };
    let report = is_radial_connected(model, &state);
    if !report.radial {
        return Err(Stage1Error::Verification(report.violations.join("; ")));
    }
    let point = solution.operating_point(model);
    let flow = linear_pf(model, &point)?;
    let sb = model.s_base_phase();
    for (i, bus) in model.buses().iter().enumerate() {
        if !flow.energized[i] {
            continue;
        }
        for p in bus.phases.indices() {
            if flow.supplied[i][p] && (flow.u[i][p] - solution.u[i][p]).abs() > RECONSTRUCTION_TOL {
                return Err(Stage1Error::Verification(format!(
                    "voltage at `{}` phase {p}: solver {} vs power flow {}",
                    bus.id, solution.u[i][p], flow.u[i][p]
                )));
            }
        }
    }
    for (k, edge) in model.edges().iter().enumerate() {
        for p in edge.phases.indices() {
            let dp = (flow.p_kw[k][p] - solution.p_kw[k][p]).abs() / sb;
            let dq = (flow.q_kvar[k][p] - solution.q_kvar[k][p]).abs() / sb;
            if dp > RECONSTRUCTION_TOL || dq > RECONSTRUCTION_TOL {
                return Err(Stage1Error::Verification(format!(
                    "flow on `{}` phase {p} differs from the power flow by {:.3e} pu",
                    edge.id,
                    dp.max(dq)
                )));
            }
        }
    }
    let tol = 2.0 * RECONSTRUCTION_TOL;
    let violations = check_limits_with(
        &flow,
        model,
        options.u_min() - tol,
        options.u_max() + tol,
        options.feeder_loading_cap,
    );
    let mut warnings = Vec::new();
    for v in violations {
        match v {
            Violation::Thermal { .. } => warnings.push(v),
            other => {
                return Err(Stage1Error::Verification(format!("{other:?}")));
            }
        }
    }
    if let Some(v) = crate::powerflow::unsupplied_loads(model, &point, &flow)
        .into_iter()
        .next()
    {
        return Err(Stage1Error::Verification(format!("{v:?}")));
    }
    Ok(warnings)
}

fn diagnose_infeasible(
    model: &NetworkModel,
    scenario: &FaultScenario,
    cycles: &[Cycle],
    options: &Stage1Options,
) -> InfeasibleCause {
    let feasible = |opts: &Stage1Options| {
        build_stage1(model, scenario, cycles, opts)
            .ok()
            .and_then(|b| milp::solve(&b.milp, &opts.solve).ok())
            .is_some_and(|r| r.has_solution())
    };
    let mut relaxed_v = options.clone();
    relaxed_v.v_min_pu = 1e-3;
    relaxed_v.v_max_pu = 10.0;
    if feasible(&relaxed_v) {
        return InfeasibleCause::VoltageLimitsUnreachable;
    }
    let mut relaxed_t = options.clone();
    relaxed_t.feeder_loading_cap = 1e6;
    if feasible(&relaxed_t) {
        return InfeasibleCause::ThermalLimitsUnreachable;
    }
    let mut both = relaxed_v;
    both.feeder_loading_cap = 1e6;
    if feasible(&both) {
        return InfeasibleCause::Unknown;
    }
    InfeasibleCause::IsolationLeavesNoSource
}

/// Restored and shed load per feeder (keyed by head bus id).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeederSummary {
    pub head: String,
    pub restored_kw: f64,
    pub shed_kw: f64,
}

pub fn feeder_summary(model: &NetworkModel, solution: &Stage1Solution) -> Vec<FeederSummary> {
    let mut by_head: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (i, bus) in model.buses().iter().enumerate() {
        if !bus.has_load() {
            continue;
        }
        let head = model
            .feeder_of_bus(i)
            .map_or_else(|| "(none)".to_string(), |h| model.bus(h).id.clone());
        let entry = by_head.entry(head).or_default();
        if solution.served[i] {
            entry.0 += bus.total_load_kw();
        } else {
            entry.1 += bus.total_load_kw();
        }
    }
    by_head
        .into_iter()
        .map(|(head, (restored_kw, shed_kw))| FeederSummary {
            head,
            restored_kw,
            shed_kw,
        })
        .collect()
}

#[doc(hidden)]
pub fn decision_edges_for_tests(
    model: &NetworkModel,
    scenario: &FaultScenario,
    allow_dg: bool,
) -> Vec<Option<bool>> {
    decision_edges(model, scenario, allow_dg)
}
