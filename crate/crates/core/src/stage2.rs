//! Stage 2: order the Stage-1 switch actions one per macro step so that
//! the load served over the horizon is maximal under cold load pickup.
//! Every macro step is split into sub-steps that share the switch states;
//! loads may be picked up on any sub-step.

use serde::{Deserialize, Serialize};

use crate::clpu::{sample_curve, ClpuCurve, ClpuError};
use crate::formulation::{EdgeSpec, Snapshot, SnapshotConfig};
use crate::milp::{
    self, LinExpr, MilpError, MilpModel, Relation, Sense, SolveOptions, SolveStats, SolveStatus,
    VarId,
};
use crate::netmodel::{FaultScenario, NetworkModel, SCHEMA_VERSION};
use crate::powerflow::{
    check_limits_with, linear_pf, sweep_pf, unsupplied_loads, OperatingPoint, PowerFlowError,
    SweepOptions, Violation,
};
use crate::stage1::{Stage1Options, Stage1Solution, RECONSTRUCTION_TOL};
use crate::topology::{is_radial_connected, Cycle, TopologyState};

#[derive(Debug, thiserror::Error)]
pub enum Stage2Error {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Clpu(#[from] ClpuError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("invalid options: {0}")]
    Options(String),
    #[error("stage-1 target is inconsistent with the scenario: {0}")]
    Inconsistent(String),
    #[error("no switching order keeps every step within limits: {cause}")]
    Infeasible { cause: Stage2InfeasibleCause },
    #[error("time limit reached without a feasible sequence")]
    NoIncumbent,
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("decoded sequence failed verification: {0}")]
    Verification(String),
}

/// Relaxation that makes an infeasible sequencing problem feasible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2InfeasibleCause {
    /// Feasible once pickup demand is held at the diversified level.
    ColdLoadPickup,
    VoltageLimits,
    ThermalLimits,
    Unknown,
}

impl std::fmt::Display for Stage2InfeasibleCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = match self {
            Stage2InfeasibleCause::ColdLoadPickup => {
                "cold load pickup demand exceeds limits for every ordering"
            }
            Stage2InfeasibleCause::VoltageLimits => "voltage limits bind at an intermediate step",
            Stage2InfeasibleCause::ThermalLimits => "thermal limits bind at an intermediate step",
            Stage2InfeasibleCause::Unknown => "no single relaxation restores feasibility",
        };
        f.write_str(text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Options {
    pub substeps_per_action: usize,
    /// Sub-steps appended after the last action so pickup demand can
    /// settle. `None` uses the longest CLPU window in the model.
    pub settle_substeps: Option<usize>,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub feeder_loading_cap: f64,
    pub solve: SolveOptions,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Stage2Options::from_stage1(&Stage1Options::default())
    }
}

impl Stage2Options {
    /// Same operating limits as Stage 1, five sub-steps per action.
    pub fn from_stage1(options: &Stage1Options) -> Self {
        Stage2Options {
            substeps_per_action: 5,
            settle_substeps: None,
            v_min_pu: options.v_min_pu,
            v_max_pu: options.v_max_pu,
            feeder_loading_cap: options.feeder_loading_cap,
            solve: options.solve.clone(),
        }
    }

    fn u_min(&self) -> f64 {
        self.v_min_pu * self.v_min_pu
    }

    fn u_max(&self) -> f64 {
        self.v_max_pu * self.v_max_pu
    }

    fn settle(&self, model: &NetworkModel) -> usize {
        self.settle_substeps.unwrap_or_else(|| {
            model
                .clpu_classes()
                .iter()
                .map(|c| c.n_samples)
                .max()
                .unwrap_or(0)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchOp {
    Open,
    Close,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchAction {
    pub edge: String,
    pub op: SwitchOp,
}

/// One sub-step of a sequence. Vectors are aligned with the model's bus
/// and edge order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceStep {
    /// 1-based sub-step index.
    pub t: usize,
    /// 1-based macro step, 0 for settling sub-steps after the last action.
    pub macro_step: usize,
    pub action: Option<SwitchAction>,
    pub pickups: Vec<String>,
    pub drops: Vec<String>,
    /// Closed switchable edges.
    pub closed_switches: Vec<String>,
    /// Buses whose load is served.
    pub served: Vec<String>,
    /// Demand multiplier per bus (zero when not served).
    pub demand_factor: Vec<f64>,
    pub served_kw: f64,
    pub weighted_served_kw: f64,
    pub min_voltage_pu: Option<f64>,
    pub u: Vec<[f64; 3]>,
    pub p_kw: Vec<[f64; 3]>,
    pub q_kvar: Vec<[f64; 3]>,
    pub dg_slack_u: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSequence {
    pub schema_version: u32,
    pub network_hash: String,
    pub substeps_per_action: usize,
    pub settle_substeps: usize,
    pub actions: Vec<SwitchAction>,
    pub steps: Vec<SequenceStep>,
    /// Σ_t Σ_i w_i · demand (kW), the optimized quantity.
    pub objective: f64,
    pub taps: Vec<[usize; 3]>,
    pub caps: Vec<[bool; 3]>,
    pub target_closed: Vec<String>,
    pub target_served: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stats: Option<SolveStatsRecord>,
}

/// Solver statistics as stored with a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStatsRecord {
    pub backend: String,
    pub wall_time_s: f64,
    pub mip_gap: Option<f64>,
    pub num_vars: usize,
    pub num_binaries: usize,
    pub num_constraints: usize,
}

impl From<&SolveStats> for SolveStatsRecord {
    fn from(s: &SolveStats) -> Self {
        SolveStatsRecord {
            backend: s.backend.clone(),
            wall_time_s: s.wall_time_s,
            mip_gap: s.mip_gap,
            num_vars: s.num_vars,
            num_binaries: s.num_binaries,
            num_constraints: s.num_constraints,
        }
    }
}

/// Role of a load bus over the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LoadRole {
    /// Served right after isolation.
    Healthy { target: bool },
    /// Outaged and restored by the plan: picked up once, never dropped.
    Pickup,
    /// Outaged and left unserved by the plan.
    Shed,
}

fn load_roles(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
) -> Vec<Option<LoadRole>> {
    let initial = initially_served(model, scenario);
    model
        .buses()
        .iter()
        .enumerate()
        .map(|(i, bus)| {
            if bus.is_source || !bus.has_load() {
                None
            } else if initial[i] {
                Some(LoadRole::Healthy {
                    target: target.served[i],
                })
            } else if target.served[i] {
                Some(LoadRole::Pickup)
            } else {
                Some(LoadRole::Shed)
            }
        })
        .collect()
}

/// Loads energized right after isolation.
pub fn initially_served(model: &NetworkModel, scenario: &FaultScenario) -> Vec<bool> {
    let report = is_radial_connected(model, &TopologyState::post_fault(model, scenario));
    (0..model.buses().len())
        .map(|i| {
            model.bus(i).has_load()
                && !model.bus(i).is_source
                && report.energized_buses.contains(&i)
        })
        .collect()
}

/// Demand curve of a bus when picked up after the outage.
pub fn pickup_curve(model: &NetworkModel, bus: usize) -> Result<ClpuCurve, ClpuError> {
    match model.clpu_of_bus(bus) {
        Some(params) => sample_curve(params),
        None => Ok(ClpuCurve::flat(1.0)),
    }
}

fn settled(model: &NetworkModel, bus: usize) -> f64 {
    model.clpu_of_bus(bus).map_or(1.0, |c| c.s_d)
}

/// Switch actions needed, in a canonical order: opens then closes, each
/// sorted by edge id.
pub fn required_actions(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
) -> Vec<(usize, SwitchOp)> {
    let initial = scenario.post_fault_closed(model);
    let mut opens = Vec::new();
    let mut closes = Vec::new();
    for k in model.switchable_edges() {
        match (initial[k], target.closed[k]) {
            (true, false) => opens.push(k),
            (false, true) => closes.push(k),
            _ => {}
        }
    }
    opens.sort_by(|a, b| model.edge(*a).id.cmp(&model.edge(*b).id));
    closes.sort_by(|a, b| model.edge(*a).id.cmp(&model.edge(*b).id));
    opens
        .into_iter()
        .map(|k| (k, SwitchOp::Open))
        .chain(closes.into_iter().map(|k| (k, SwitchOp::Close)))
        .collect()
}

pub struct Stage2Model {
    pub milp: MilpModel,
    pub horizon: usize,
    actions: Vec<(usize, SwitchOp)>,
    /// `delta[a][m]`: closed state of action edge `a` during macro step `m + 1`.
    delta: Vec<Vec<VarId>>,
    snapshots: Vec<Snapshot>,
    /// Served binary per bus and sub-step.
    served: Vec<Option<Vec<LinExpr>>>,
    demand: Vec<Vec<Option<LinExpr>>>,
    macro_of: Vec<usize>,
}

/// Builds the sequencing MILP. With `fixed_order` the action order is
/// imposed (indices into [`required_actions`]) and only loads are chosen.
pub fn build_stage2(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
    cycles: &[Cycle],
    options: &Stage2Options,
    fixed_order: Option<&[usize]>,
) -> Result<Stage2Model, Stage2Error> {
    build(model, scenario, target, cycles, options, fixed_order, false)
}

fn build(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
    cycles: &[Cycle],
    options: &Stage2Options,
    fixed_order: Option<&[usize]>,
    flat_clpu: bool,
) -> Result<Stage2Model, Stage2Error> {
    if options.substeps_per_action == 0 {
        return Err(Stage2Error::Options(
            "substeps_per_action must be >= 1".into(),
        ));
    }
    let forced = scenario.forced_open(model);
    for k in 0..model.edges().len() {
        if forced[k] && target.closed[k] {
            return Err(Stage2Error::Inconsistent(format!(
                "target closes forced-open edge `{}`",
                model.edge(k).id
            )));
        }
    }
    let actions = required_actions(model, scenario, target);
    let n_macro = actions.len();
    let settle = if n_macro == 0 {
        0
    } else {
        options.settle(model)
    };
    let horizon = n_macro * options.substeps_per_action + settle;
    let macro_of: Vec<usize> = (0..horizon)
        .map(|t| (t / options.substeps_per_action).min(n_macro.saturating_sub(1)))
        .collect();

    let mut milp = MilpModel::new();
    let mut delta = Vec::with_capacity(n_macro);
    for (a, (k, op)) in actions.iter().enumerate() {
        let id = &model.edge(*k).id;
        let mut row = Vec::with_capacity(n_macro);
        for m in 0..n_macro {
            let d = milp.binary(format!("delta[{id}]@m{}", m + 1))?;
            row.push(d);
        }
        // Monotone trajectory ending at the target.
        for m in 0..n_macro {
            let prev = if m == 0 { None } else { Some(row[m - 1]) };
            let (expr, rhs) = match (op, prev) {
                (SwitchOp::Close, Some(p)) => (LinExpr::var(row[m]).with(p, -1.0), 0.0),
                (SwitchOp::Open, Some(p)) => (LinExpr::var(p).with(row[m], -1.0), 0.0),
                _ => continue,
            };
            milp.constrain(format!("mono[{id}]@m{}", m + 1), expr, Relation::Ge, rhs);
        }
        let last = row[n_macro - 1];
        milp.fix(last, if *op == SwitchOp::Close { 1.0 } else { 0.0 });
        let _ = a;
        delta.push(row);
    }
    // Exactly one action per macro step.
    for m in 0..n_macro {
        let mut count = LinExpr::new();
        for (a, (_, op)) in actions.iter().enumerate() {
            let change = |m: usize| -> LinExpr {
                let cur = LinExpr::var(delta[a][m]);
                let prev = if m == 0 {
                    LinExpr::constant(if *op == SwitchOp::Close { 0.0 } else { 1.0 })
                } else {
                    LinExpr::var(delta[a][m - 1])
                };
                match op {
                    SwitchOp::Close => cur.plus(&prev, -1.0),
                    SwitchOp::Open => prev.plus(&cur, -1.0),
                }
            };
            count.add_expr(&change(m), 1.0);
        }
        milp.constrain(format!("one_action@m{}", m + 1), count, Relation::Eq, 1.0);
    }
    if let Some(order) = fixed_order {
        if order.len() != n_macro {
            return Err(Stage2Error::Options(
                "fixed order must list every action once".into(),
            ));
        }
        for (m, &a) in order.iter().enumerate() {
            for step in m..n_macro {
                let closed = actions[a].1 == SwitchOp::Close;
                milp.fix(delta[a][step], if closed { 1.0 } else { 0.0 });
            }
            for step in 0..m {
                let closed = actions[a].1 == SwitchOp::Open;
                milp.fix(delta[a][step], if closed { 1.0 } else { 0.0 });
            }
        }
    }

    let initial = scenario.post_fault_closed(model);
    let roles = load_roles(model, scenario, target);
    let curves: Vec<Option<ClpuCurve>> = roles
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Some(LoadRole::Pickup) if flat_clpu => Ok(Some(ClpuCurve::flat(settled(model, i)))),
            Some(LoadRole::Pickup) => pickup_curve(model, i).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_, _>>()?;
    let scale_max = curves
        .iter()
        .flatten()
        .map(|c| c.s_u)
        .chain((0..model.buses().len()).map(|i| settled(model, i)))
        .fold(1.0, f64::max);

    let mut snapshots = Vec::with_capacity(horizon);
    let mut served: Vec<Option<Vec<LinExpr>>> = vec![None; model.buses().len()];
    for (i, r) in roles.iter().enumerate() {
        if r.is_some() {
            served[i] = Some(Vec::with_capacity(horizon));
        }
    }
    let mut demand_all = Vec::with_capacity(horizon);
    let mut objective = LinExpr::new();
    let action_index: std::collections::HashMap<usize, usize> = actions
        .iter()
        .enumerate()
        .map(|(a, (k, _))| (*k, a))
        .collect();

    let no_cycles: [Cycle; 0] = [];
    for t in 0..horizon {
        let m = macro_of[t];
        let edges: Vec<EdgeSpec> = (0..model.edges().len())
            .map(|k| match action_index.get(&k) {
                Some(&a) => EdgeSpec::Var(delta[a][m]),
                None => {
                    if model.is_switchable(k) {
                        if initial[k] {
                            EdgeSpec::Closed
                        } else {
                            EdgeSpec::Open
                        }
                    } else if forced[k] {
                        EdgeSpec::Open
                    } else {
                        EdgeSpec::Closed
                    }
                }
            })
            .collect();
        let first_of_macro =
            t % options.substeps_per_action == 0 && t < n_macro * options.substeps_per_action;
        let cfg = SnapshotConfig {
            tag: format!("@t{}", t + 1),
            edges,
            taps: Some(&target.taps),
            caps: Some(&target.caps),
            u_min: options.u_min(),
            u_max: options.u_max(),
            head_cap: options.feeder_loading_cap,
            demand_scale_max: scale_max,
            cycles: if first_of_macro { cycles } else { &no_cycles },
        };
        let snap = Snapshot::declare(&mut milp, model, &cfg)?;
        let mut demand: Vec<Option<LinExpr>> = vec![None; model.buses().len()];
        for (i, role) in roles.iter().enumerate() {
            let Some(role) = role else { continue };
            let bus = model.bus(i);
            let v = snap.v[i];
            let tag = &cfg.tag;
            let s: LinExpr = match role {
                LoadRole::Shed => {
                    if !bus.load_switchable {
                        milp.fix(v, 0.0);
                    }
                    LinExpr::new()
                }
                LoadRole::Healthy { target: tgt } => {
                    let s = if bus.load_switchable {
                        let s = milp.binary(format!("s[{}]{tag}", bus.id))?;
                        milp.constrain(
                            format!("sv[{}]{tag}", bus.id),
                            LinExpr::var(s).with(v, -1.0),
                            Relation::Le,
                            0.0,
                        );
                        s
                    } else {
                        v
                    };
                    if t + 1 == horizon {
                        milp.fix(s, if *tgt { 1.0 } else { 0.0 });
                    }
                    LinExpr::var(s)
                }
                LoadRole::Pickup => {
                    let s = if bus.load_switchable {
                        let s = milp.binary(format!("s[{}]{tag}", bus.id))?;
                        milp.constrain(
                            format!("sv[{}]{tag}", bus.id),
                            LinExpr::var(s).with(v, -1.0),
                            Relation::Le,
                            0.0,
                        );
                        s
                    } else {
                        v
                    };
                    if let Some(prev) = served[i].as_ref().and_then(|h| h.last()) {
                        milp.constrain(
                            format!("pick[{}]{tag}", bus.id),
                            LinExpr::var(s).plus(prev, -1.0),
                            Relation::Ge,
                            0.0,
                        );
                    }
                    if t + 1 == horizon {
                        milp.fix(s, 1.0);
                    }
                    LinExpr::var(s)
                }
            };
            let history = served[i].as_mut().expect("load history");
            history.push(s);
            let factor = match role {
                LoadRole::Pickup => {
                    let curve = curves[i].as_ref().expect("pickup curve");
                    let mut f = LinExpr::new();
                    for (j, c) in curve.lag_coefficients().iter().enumerate() {
                        if t >= j && *c != 0.0 {
                            f.add_expr(&history[t - j], *c);
                        }
                    }
                    f
                }
                _ => history[t].scaled(settled(model, i)),
            };
            objective.add_expr(&factor, bus.weight * bus.total_load_kw());
            demand[i] = Some(factor);
        }
        snap.constrain(&mut milp, model, &cfg, &demand)?;
        demand_all.push(demand);
        snapshots.push(snap);
    }
    milp.set_objective(Sense::Maximize, objective);
    Ok(Stage2Model {
        milp,
        horizon,
        actions,
        delta,
        snapshots,
        served,
        demand: demand_all,
        macro_of,
    })
}

pub fn solve_stage2(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
    cycles: &[Cycle],
    options: &Stage2Options,
) -> Result<SwitchingSequence, Stage2Error> {
    solve_with_order(model, scenario, target, cycles, options, None)
}

/// Opens sorted by id, then closes sorted by id, with loads still chosen
/// optimally. `Ok(None)` when that order is infeasible.
pub fn solve_naive(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
    cycles: &[Cycle],
    options: &Stage2Options,
) -> Result<Option<SwitchingSequence>, Stage2Error> {
    let n = required_actions(model, scenario, target).len();
    let order: Vec<usize> = (0..n).collect();
    match solve_with_order(model, scenario, target, cycles, options, Some(&order)) {
        Ok(seq) => Ok(Some(seq)),
        Err(Stage2Error::Infeasible { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn solve_with_order(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
    cycles: &[Cycle],
    options: &Stage2Options,
    order: Option<&[usize]>,
) -> Result<SwitchingSequence, Stage2Error> {
    let built = build_stage2(model, scenario, target, cycles, options, order)?;
    let result = milp::solve(&built.milp, &options.solve)?;
    match result.status {
        SolveStatus::Optimal | SolveStatus::TimeLimit if result.has_solution() => {}
        SolveStatus::TimeLimit => return Err(Stage2Error::NoIncumbent),
        SolveStatus::Infeasible => {
            let cause = if order.is_some() {
                Stage2InfeasibleCause::Unknown
            } else {
                diagnose_infeasible(model, scenario, target, cycles, options)
            };
            return Err(Stage2Error::Infeasible { cause });
        }
        _ => return Err(Stage2Error::Solver(result.stats.detail.clone())),
    }
    let values = result.values.as_ref().expect("solution values");
    let seq = decode(
        model,
        scenario,
        target,
        &built,
        values,
        options,
        &result.stats,
    )?;
    verify(model, scenario, &seq, options)?;
    Ok(seq)
}

fn diagnose_infeasible(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
    cycles: &[Cycle],
    options: &Stage2Options,
) -> Stage2InfeasibleCause {
    let feasible = |opts: &Stage2Options, flat: bool| {
        build(model, scenario, target, cycles, opts, None, flat)
            .ok()
            .and_then(|b| milp::solve(&b.milp, &opts.solve).ok())
            .is_some_and(|r| r.has_solution())
    };
    if feasible(options, true) {
        return Stage2InfeasibleCause::ColdLoadPickup;
    }
    let mut relaxed_v = options.clone();
    relaxed_v.v_min_pu = 1e-3;
    relaxed_v.v_max_pu = 10.0;
    if feasible(&relaxed_v, false) {
        return Stage2InfeasibleCause::VoltageLimits;
    }
    let mut relaxed_t = options.clone();
    relaxed_t.feeder_loading_cap = 1e6;
    if feasible(&relaxed_t, false) {
        return Stage2InfeasibleCause::ThermalLimits;
    }
    Stage2InfeasibleCause::Unknown
}

fn decode(
    model: &NetworkModel,
    scenario: &FaultScenario,
    target: &Stage1Solution,
    built: &Stage2Model,
    values: &[f64],
    options: &Stage2Options,
    stats: &SolveStats,
) -> Result<SwitchingSequence, Stage2Error> {
    let n_macro = built.actions.len();
    // Macro step at which each action happens.
    let mut actions: Vec<(usize, SwitchAction)> = Vec::with_capacity(n_macro);
    for (a, (k, op)) in built.actions.iter().enumerate() {
        let closed_at = |m: usize| values[built.delta[a][m].0] > 0.5;
        let initial = *op == SwitchOp::Open;
        let m = (0..n_macro)
            .find(|m| closed_at(*m) != initial)
            .ok_or_else(|| {
                Stage2Error::Verification(format!(
                    "action on `{}` never happens",
                    model.edge(*k).id
                ))
            })?;
        actions.push((
            m,
            SwitchAction {
                edge: model.edge(*k).id.clone(),
                op: *op,
            },
        ));
    }
    actions.sort_by_key(|(m, _)| *m);
    for (pos, (m, _)) in actions.iter().enumerate() {
        if *m != pos {
            return Err(Stage2Error::Verification(format!(
                "macro step {} has no single action",
                pos + 1
            )));
        }
    }

    let mut steps = Vec::with_capacity(built.horizon);
    let mut prev_served: Vec<bool> = initially_served(model, scenario);
    for t in 0..built.horizon {
        let snap = &built.snapshots[t];
        let closed = snap.closed(values);
        let m = built.macro_of[t];
        let action = (t % options.substeps_per_action == 0
            && t < n_macro * options.substeps_per_action)
            .then(|| actions[m].1.clone());
        let (p_kw, q_kvar) = snap.flows_kw(model, values);
        let mut served_ids = Vec::new();
        let mut served_now = vec![false; model.buses().len()];
        let mut factors = vec![0.0; model.buses().len()];
        let mut served_kw = 0.0;
        let mut weighted = 0.0;
        for (i, bus) in model.buses().iter().enumerate() {
            let Some(hist) = &built.served[i] else {
                continue;
            };
            if hist[t].eval(values) > 0.5 {
                served_now[i] = true;
                served_ids.push(bus.id.clone());
            }
            if let Some(d) = &built.demand[t][i] {
                factors[i] = d.eval(values);
                served_kw += factors[i] * bus.total_load_kw();
                weighted += factors[i] * bus.total_load_kw() * bus.weight;
            }
        }
        let pickups = (0..model.buses().len())
            .filter(|i| served_now[*i] && !prev_served[*i])
            .map(|i| model.bus(i).id.clone())
            .collect();
        let drops = (0..model.buses().len())
            .filter(|i| !served_now[*i] && prev_served[*i])
            .map(|i| model.bus(i).id.clone())
            .collect();
        prev_served = served_now;

        let mut point = OperatingPoint::unloaded(model, closed.clone());
        point.taps = target.taps.clone();
        point.caps = target.caps.clone();
        let mut dg_slack_u = vec![1.0; model.dgs().len()];
        for (d, dg) in model.dgs().iter().enumerate() {
            if let Some(k) = model.virtual_edge_of_dg(d) {
                if closed[k] {
                    let b = model.bus_index(&dg.bus).expect("dg bus");
                    let p = model.bus(b).phases.indices().next().expect("phases");
                    dg_slack_u[d] = snap.u[b][p].map_or(1.0, |x| values[x.0]);
                }
            }
        }
        point.dg_slack_u = dg_slack_u.clone();
        let flow = linear_pf(model, &point)?;
        let mut u = snap.voltages(values);
        for (i, row) in u.iter_mut().enumerate() {
            if !flow.energized[i] {
                *row = [0.0; 3];
            }
        }
        let min_voltage_pu = u
            .iter()
            .zip(&flow.supplied)
            .flat_map(|(row, s)| {
                (0..3)
                    .filter(|p| s[*p])
                    .map(move |p| row[p].max(0.0).sqrt())
            })
            .reduce(f64::min);
        steps.push(SequenceStep {
            t: t + 1,
            macro_step: if t < n_macro * options.substeps_per_action {
                m + 1
            } else {
                0
            },
            action,
            pickups,
            drops,
            closed_switches: model
                .switchable_edges()
                .filter(|k| closed[*k])
                .map(|k| model.edge(k).id.clone())
                .collect(),
            served: served_ids,
            demand_factor: factors,
            served_kw,
            weighted_served_kw: weighted,
            min_voltage_pu,
            u,
            p_kw,
            q_kvar,
            dg_slack_u,
        });
    }
    let objective = steps.iter().map(|s| s.weighted_served_kw).sum::<f64>() + 0.0;
    Ok(SwitchingSequence {
        schema_version: SCHEMA_VERSION,
        network_hash: model.content_hash(),
        substeps_per_action: options.substeps_per_action,
        settle_substeps: built.horizon - n_macro * options.substeps_per_action,
        actions: actions.into_iter().map(|(_, a)| a).collect(),
        steps,
        objective,
        taps: target.taps.clone(),
        caps: target.caps.clone(),
        target_closed: model
            .switchable_edges()
            .filter(|k| target.closed[*k])
            .map(|k| model.edge(k).id.clone())
            .collect(),
        target_served: (0..model.buses().len())
            .filter(|i| target.served[*i])
            .map(|i| model.bus(i).id.clone())
            .collect(),
        stats: Some(SolveStatsRecord::from(stats)),
    })
}

/// Rebuilds the closed vector of a step from its switch list.
fn closed_vector(
    model: &NetworkModel,
    scenario: &FaultScenario,
    closed_switches: &[String],
) -> Result<Vec<bool>, String> {
    let forced = scenario.forced_open(model);
    let mut closed: Vec<bool> = (0..model.edges().len())
        .map(|k| !model.is_switchable(k) && !forced[k])
        .collect();
    for id in closed_switches {
        let k = model
            .edge_index(id)
            .ok_or_else(|| format!("unknown edge `{id}`"))?;
        if !model.is_switchable(k) {
            return Err(format!("`{id}` is not a switch"));
        }
        closed[k] = true;
    }
    Ok(closed)
}

/// Served flags per step recomputed from the bus id lists.
fn served_matrix(model: &NetworkModel, seq: &SwitchingSequence) -> Result<Vec<Vec<bool>>, String> {
    seq.steps
        .iter()
        .map(|s| {
            let mut row = vec![false; model.buses().len()];
            for id in &s.served {
                let i = model
                    .bus_index(id)
                    .ok_or_else(|| format!("unknown bus `{id}`"))?;
                row[i] = true;
            }
            Ok(row)
        })
        .collect()
}

/// Demand per step and bus as computed independently from the served
/// history: pickup curve for outaged loads, settled factor otherwise.
pub fn demand_factors(
    model: &NetworkModel,
    scenario: &FaultScenario,
    seq: &SwitchingSequence,
) -> Result<Vec<Vec<f64>>, String> {
    let served = served_matrix(model, seq)?;
    let initial = initially_served(model, scenario);
    let horizon = seq.steps.len();
    let mut out = vec![vec![0.0; model.buses().len()]; horizon];
    for i in 0..model.buses().len() {
        if !model.bus(i).has_load() || model.bus(i).is_source {
            continue;
        }
        let history: Vec<bool> = served.iter().map(|row| row[i]).collect();
        if initial[i] {
            for t in 0..horizon {
                out[t][i] = if history[t] { settled(model, i) } else { 0.0 };
            }
        } else {
            let curve = pickup_curve(model, i).map_err(|e| e.to_string())?;
            let demand = crate::clpu::load_at_step(&curve, &history, 1.0, 0.0)
                .map_err(|e| format!("bus `{}`: {e}", model.bus(i).id))?;
            for t in 0..horizon {
                out[t][i] = demand[t].0;
            }
        }
    }
    Ok(out)
}

/// Structural and linear-model checks of a decoded sequence.
pub fn verify(
    model: &NetworkModel,
    scenario: &FaultScenario,
    seq: &SwitchingSequence,
    options: &Stage2Options,
) -> Result<(), Stage2Error> {
    let fail = |m: String| Stage2Error::Verification(m);
    let factors = demand_factors(model, scenario, seq).map_err(fail)?;
    let forced = scenario.forced_open(model);
    let mut prev = scenario.post_fault_closed(model);
    let mut toggled = std::collections::HashSet::new();
    let tol = 2.0 * RECONSTRUCTION_TOL;
    for (t, step) in seq.steps.iter().enumerate() {
        let closed = closed_vector(model, scenario, &step.closed_switches).map_err(fail)?;
        let changed: Vec<usize> = (0..closed.len())
            .filter(|k| closed[*k] != prev[*k])
            .collect();
        if changed.len() > 1 {
            return Err(fail(format!(
                "step {} changes {} switches",
                step.t,
                changed.len()
            )));
        }
        for k in &changed {
            if !toggled.insert(*k) {
                return Err(fail(format!("`{}` toggles twice", model.edge(*k).id)));
            }
        }
        let report = is_radial_connected(
            model,
            &TopologyState {
                closed: closed.clone(),
                forced_open: forced.clone(),
            },
        );
        if !report.radial {
            return Err(fail(format!(
                "step {}: {}",
                step.t,
                report.violations.join("; ")
            )));
        }
        let point = step_point(model, seq, step, &closed, &factors[t]);
        let flow = linear_pf(model, &point)?;
        for (i, f) in factors[t].iter().enumerate() {
            if (f - step.demand_factor[i]).abs() > 1e-9 {
                return Err(fail(format!(
                    "step {}: demand of `{}` differs from its pickup curve",
                    step.t,
                    model.bus(i).id
                )));
            }
        }
        for (i, bus) in model.buses().iter().enumerate() {
            for p in bus.phases.indices() {
                if flow.energized[i]
                    && flow.supplied[i][p]
                    && (flow.u[i][p] - step.u[i][p]).abs() > RECONSTRUCTION_TOL
                {
                    return Err(fail(format!(
                        "step {}: voltage at `{}` differs from the power flow",
                        step.t, bus.id
                    )));
                }
            }
        }
        let limits = check_limits_with(
            &flow,
            model,
            options.u_min() - tol,
            options.u_max() + tol,
            options.feeder_loading_cap,
        );
        if let Some(v) = limits
            .iter()
            .find(|v| !matches!(v, Violation::Thermal { .. }))
        {
            return Err(fail(format!("step {}: {v:?}", step.t)));
        }
        if let Some(v) = unsupplied_loads(model, &point, &flow).first() {
            return Err(fail(format!("step {}: {v:?}", step.t)));
        }
        prev = closed;
    }
    if let Some(last) = seq.steps.last() {
        let mut closed = last.closed_switches.clone();
        closed.sort();
        let mut target = seq.target_closed.clone();
        target.sort();
        if closed != target {
            return Err(fail("final switch states differ from the target".into()));
        }
        let mut served = last.served.clone();
        served.sort();
        let mut target = seq.target_served.clone();
        target.sort();
        if served != target {
            return Err(fail("final served loads differ from the target".into()));
        }
    }
    Ok(())
}

fn step_point(
    model: &NetworkModel,
    seq: &SwitchingSequence,
    step: &SequenceStep,
    closed: &[bool],
    factors: &[f64],
) -> OperatingPoint {
    let mut point = OperatingPoint::unloaded(model, closed.to_vec());
    for (i, f) in factors.iter().enumerate() {
        if *f != 0.0 {
            point.serve(model, i, *f);
        }
    }
    point.taps = seq.taps.clone();
    point.caps = seq.caps.clone();
    if step.dg_slack_u.len() == model.dgs().len() {
        point.dg_slack_u = step.dg_slack_u.clone();
    }
    point
}

/// Problem found while replaying a sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayIssue {
    Limit { violation: Violation },
    NotRadial { detail: String },
    MultipleActions { edges: Vec<String> },
    RepeatedToggle { edge: String },
    PickupDropped { bus: String },
    PowerFlow { detail: String },
    Malformed { detail: String },
    TerminalMismatch { detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub t: usize,
    pub min_voltage_pu: Option<f64>,
    pub served_kw: f64,
    pub issues: Vec<ReplayIssue>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    pub passed: bool,
    pub steps: Vec<StepReport>,
    /// Problems not tied to one step.
    pub issues: Vec<ReplayIssue>,
    pub max_voltage_gap_pu: f64,
}

/// Re-simulates every step with the nonlinear sweep and checks the
/// sequence contract. Report only; never fails.
pub fn replay_sequence(
    model: &NetworkModel,
    scenario: &FaultScenario,
    seq: &SwitchingSequence,
    v_min_pu: f64,
    v_max_pu: f64,
    feeder_loading_cap: f64,
) -> ReplayReport {
    let mut issues = Vec::new();
    let mut reports = Vec::with_capacity(seq.steps.len());
    let served = match served_matrix(model, seq) {
        Ok(s) => s,
        Err(detail) => {
            return ReplayReport {
                passed: false,
                steps: Vec::new(),
                issues: vec![ReplayIssue::Malformed { detail }],
                max_voltage_gap_pu: 0.0,
            }
        }
    };
    let initial = initially_served(model, scenario);
    // Pickup monotonicity is reported per step; demand uses the history
    // truncated at the first drop so replay can continue.
    let mut history_ok = served.clone();
    for i in 0..model.buses().len() {
        if initial[i] {
            continue;
        }
        let mut picked = false;
        for row in history_ok.iter_mut() {
            if row[i] {
                picked = true;
            } else if picked {
                row[i] = true;
            }
        }
    }
    let replay_seq = SwitchingSequence {
        steps: seq
            .steps
            .iter()
            .zip(&history_ok)
            .map(|(s, row)| SequenceStep {
                served: (0..row.len())
                    .filter(|i| row[*i])
                    .map(|i| model.bus(i).id.clone())
                    .collect(),
                ..s.clone()
            })
            .collect(),
        ..seq.clone()
    };
    let factors = match demand_factors(model, scenario, &replay_seq) {
        Ok(f) => f,
        Err(detail) => {
            return ReplayReport {
                passed: false,
                steps: Vec::new(),
                issues: vec![ReplayIssue::Malformed { detail }],
                max_voltage_gap_pu: 0.0,
            }
        }
    };
    let forced = scenario.forced_open(model);
    let mut prev_closed = scenario.post_fault_closed(model);
    let mut prev_served = initial.clone();
    let mut toggled = std::collections::HashSet::new();
    let mut max_gap: f64 = 0.0;
    let (u_min, u_max) = (v_min_pu * v_min_pu, v_max_pu * v_max_pu);
    for (t, step) in seq.steps.iter().enumerate() {
        let mut step_issues = Vec::new();
        let closed = match closed_vector(model, scenario, &step.closed_switches) {
            Ok(c) => c,
            Err(detail) => {
                issues.push(ReplayIssue::Malformed { detail });
                break;
            }
        };
        let changed: Vec<usize> = (0..closed.len())
            .filter(|k| closed[*k] != prev_closed[*k])
            .collect();
        if changed.len() > 1 {
            step_issues.push(ReplayIssue::MultipleActions {
                edges: changed.iter().map(|k| model.edge(*k).id.clone()).collect(),
            });
        }
        for k in &changed {
            if !toggled.insert(*k) {
                step_issues.push(ReplayIssue::RepeatedToggle {
                    edge: model.edge(*k).id.clone(),
                });
            }
        }
        for i in 0..model.buses().len() {
            if !initial[i] && prev_served[i] && !served[t][i] {
                step_issues.push(ReplayIssue::PickupDropped {
                    bus: model.bus(i).id.clone(),
                });
            }
        }
        let report = is_radial_connected(
            model,
            &TopologyState {
                closed: closed.clone(),
                forced_open: forced.clone(),
            },
        );
        let mut min_v = None;
        let mut served_kw = 0.0;
        if !report.radial {
            step_issues.push(ReplayIssue::NotRadial {
                detail: report.violations.join("; "),
            });
        } else {
            let point = step_point(model, seq, step, &closed, &factors[t]);
            served_kw = point.p_kw.iter().flatten().sum();
            match sweep_pf(model, &point, SweepOptions::default()) {
                Ok(flow) => {
                    min_v = flow.min_voltage();
                    for v in check_limits_with(&flow, model, u_min, u_max, feeder_loading_cap) {
                        step_issues.push(ReplayIssue::Limit { violation: v });
                    }
                    for v in unsupplied_loads(model, &point, &flow) {
                        step_issues.push(ReplayIssue::Limit { violation: v });
                    }
                    for (i, bus) in model.buses().iter().enumerate() {
                        for p in bus.phases.indices() {
                            if flow.supplied[i][p] && step.u.len() == model.buses().len() {
                                max_gap = max_gap
                                    .max((flow.v[i][p] - step.u[i][p].max(0.0).sqrt()).abs());
                            }
                        }
                    }
                }
                Err(e) => step_issues.push(ReplayIssue::PowerFlow {
                    detail: e.to_string(),
                }),
            }
        }
        reports.push(StepReport {
            t: step.t,
            min_voltage_pu: min_v,
            served_kw,
            issues: step_issues,
        });
        prev_closed = closed;
        prev_served = served[t].clone();
    }
    if let Some(last) = seq.steps.last() {
        let sorted = |v: &[String]| {
            let mut v = v.to_vec();
            v.sort();
            v
        };
        if sorted(&last.closed_switches) != sorted(&seq.target_closed) {
            issues.push(ReplayIssue::TerminalMismatch {
                detail: "switch states".into(),
            });
        }
        if sorted(&last.served) != sorted(&seq.target_served) {
            issues.push(ReplayIssue::TerminalMismatch {
                detail: "served loads".into(),
            });
        }
    }
    let passed = issues.is_empty() && reports.iter().all(|r| r.issues.is_empty());
    ReplayReport {
        passed,
        steps: reports,
        issues,
        max_voltage_gap_pu: max_gap,
    }
}

/// Optimal against naive ordering.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub optimal_served_kw: Vec<f64>,
    /// `None` when the naive order is infeasible.
    pub naive_served_kw: Option<Vec<f64>>,
    pub optimal_objective: f64,
    pub naive_objective: Option<f64>,
    pub optimal_customer_minutes: f64,
    pub naive_customer_minutes: Option<f64>,
    /// Initially served customers that lose service at some step.
    pub optimal_interruptions: usize,
    pub naive_interruptions: Option<usize>,
    pub minutes_per_step: f64,
}

/// Customer-minutes interrupted (each load bus counts as one customer) and
/// the number of initially served customers interrupted.
pub fn interruption_stats(
    model: &NetworkModel,
    scenario: &FaultScenario,
    seq: &SwitchingSequence,
    minutes_per_step: f64,
) -> (f64, usize) {
    let initial = initially_served(model, scenario);
    let target: std::collections::HashSet<&str> =
        seq.target_served.iter().map(String::as_str).collect();
    let mut minutes = 0.0;
    let mut interrupted = std::collections::HashSet::new();
    for step in &seq.steps {
        let served: std::collections::HashSet<&str> =
            step.served.iter().map(String::as_str).collect();
        for (i, bus) in model.buses().iter().enumerate() {
            if !target.contains(bus.id.as_str()) || served.contains(bus.id.as_str()) {
                continue;
            }
            minutes += minutes_per_step;
            if initial[i] {
                interrupted.insert(i);
            }
        }
    }
    (minutes, interrupted.len())
}

pub fn compare(
    model: &NetworkModel,
    scenario: &FaultScenario,
    optimal: &SwitchingSequence,
    naive: Option<&SwitchingSequence>,
) -> Comparison {
    let minutes = model
        .clpu_classes()
        .first()
        .map_or(1.0, |c| c.sample_period_min);
    let (opt_cmi, opt_int) = interruption_stats(model, scenario, optimal, minutes);
    let naive_stats = naive.map(|n| interruption_stats(model, scenario, n, minutes));
    Comparison {
        optimal_served_kw: optimal.steps.iter().map(|s| s.served_kw).collect(),
        naive_served_kw: naive.map(|n| n.steps.iter().map(|s| s.served_kw).collect()),
        optimal_objective: optimal.objective,
        naive_objective: naive.map(|n| n.objective),
        optimal_customer_minutes: opt_cmi,
        naive_customer_minutes: naive_stats.map(|s| s.0),
        optimal_interruptions: opt_int,
        naive_interruptions: naive_stats.map(|s| s.1),
        minutes_per_step: minutes,
    }
}
