//! Run artifacts: the Stage-1 report, sequence and comparison tables, the
//! validation report and run metadata.

use std::io::Write;

use serde::Serialize;

use crate::netmodel::{FaultScenario, NetworkModel, SCHEMA_VERSION};
use crate::powerflow::{check_limits_with, sweep_pf, SweepOptions, Violation};
use crate::stage1::{
    feeder_summary, FeederSummary, ObjectiveWeights, Stage1Options, Stage1Solution,
};
use crate::stage2::{Comparison, ReplayReport, Stage2Options, SwitchingSequence};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BusState {
    pub id: String,
    pub energized: bool,
    pub served: bool,
    /// Linear-model voltage magnitude per phase (pu), zero when absent.
    pub v_pu: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeState {
    pub id: String,
    pub closed: bool,
    pub p_kw: [f64; 3],
    pub q_kvar: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stage1Report {
    pub schema_version: u32,
    pub network_hash: String,
    pub scenario: String,
    pub objective: f64,
    pub weights: ObjectiveWeights,
    pub outage_kw: f64,
    pub restored_kw: f64,
    pub weighted_restored_kw: f64,
    pub shed_kw: f64,
    pub to_open: Vec<String>,
    pub to_close: Vec<String>,
    pub dg_islands: Vec<String>,
    pub feeders: Vec<FeederSummary>,
    pub taps: Vec<TapSetting>,
    pub capacitors: Vec<CapSetting>,
    pub buses: Vec<BusState>,
    pub edges: Vec<EdgeState>,
    pub warnings: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TapSetting {
    pub regulator: String,
    pub positions: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapSetting {
    pub bus: String,
    pub on: [bool; 3],
}

pub fn stage1_report(
    model: &NetworkModel,
    scenario: &FaultScenario,
    sol: &Stage1Solution,
) -> Stage1Report {
    Stage1Report {
        schema_version: SCHEMA_VERSION,
        network_hash: model.content_hash(),
        scenario: scenario.description.clone(),
        objective: sol.objective,
        weights: sol.weights,
        outage_kw: sol.outage_kw,
        restored_kw: sol.restored_kw,
        weighted_restored_kw: sol.weighted_restored_kw,
        shed_kw: sol.shed_kw,
        to_open: sol.switch_ops.to_open.clone(),
        to_close: sol.switch_ops.to_close.clone(),
        dg_islands: sol.dg_islands.clone(),
        feeders: feeder_summary(model, sol),
        taps: model
            .regulators()
            .iter()
            .zip(&sol.taps)
            .map(|(r, t)| TapSetting {
                regulator: r.edge.clone(),
                positions: *t,
            })
            .collect(),
        capacitors: model
            .capacitors()
            .iter()
            .zip(&sol.caps)
            .map(|(c, on)| CapSetting {
                bus: c.bus.clone(),
                on: *on,
            })
            .collect(),
        buses: model
            .buses()
            .iter()
            .enumerate()
            .map(|(i, b)| BusState {
                id: b.id.clone(),
                energized: sol.energized[i],
                served: sol.served[i],
                v_pu: sol.u[i].map(|u| u.max(0.0).sqrt()),
            })
            .collect(),
        edges: model
            .edges()
            .iter()
            .enumerate()
            .map(|(k, e)| EdgeState {
                id: e.id.clone(),
                closed: sol.closed[k],
                p_kw: sol.p_kw[k],
                q_kvar: sol.q_kvar[k],
            })
            .collect(),
        warnings: sol.warnings.clone(),
    }
}

/// Nonlinear check of the Stage-1 restored state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stage1Check {
    pub passed: bool,
    pub min_voltage_pu: Option<f64>,
    /// Largest |V_linear - V_sweep| over supplied bus phases (pu).
    pub max_voltage_gap_pu: f64,
    pub violations: Vec<Violation>,
    pub error: Option<String>,
}

pub fn check_stage1(
    model: &NetworkModel,
    sol: &Stage1Solution,
    options: &Stage1Options,
) -> Stage1Check {
    let point = sol.operating_point(model);
    match sweep_pf(model, &point, SweepOptions::default()) {
        Ok(flow) => {
            let violations = check_limits_with(
                &flow,
                model,
                options.v_min_pu.powi(2),
                options.v_max_pu.powi(2),
                options.feeder_loading_cap,
            );
            let mut gap: f64 = 0.0;
            for (i, bus) in model.buses().iter().enumerate() {
                for p in bus.phases.indices() {
                    if flow.supplied[i][p] {
                        gap = gap.max((flow.v[i][p] - sol.u[i][p].max(0.0).sqrt()).abs());
                    }
                }
            }
            Stage1Check {
                passed: violations.is_empty(),
                min_voltage_pu: flow.min_voltage(),
                max_voltage_gap_pu: gap,
                violations,
                error: None,
            }
        }
        Err(e) => Stage1Check {
            passed: false,
            min_voltage_pu: None,
            max_voltage_gap_pu: 0.0,
            violations: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Stage1Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence: Option<ReplayReport>,
}

impl ValidationReport {
    pub fn new(stage1: Option<Stage1Check>, sequence: Option<ReplayReport>) -> Self {
        let passed =
            stage1.as_ref().is_none_or(|c| c.passed) && sequence.as_ref().is_none_or(|r| r.passed);
        ValidationReport {
            passed,
            stage1,
            sequence,
        }
    }
}

/// One row per event: switch action, load pickup or drop, or `none` for a
/// sub-step without events.
pub fn write_sequence_csv<W: Write>(
    seq: &SwitchingSequence,
    replay: Option<&ReplayReport>,
    out: W,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "step",
        "macro_step",
        "action",
        "id",
        "served_kw",
        "min_voltage_pu",
        "sweep_min_voltage_pu",
    ])?;
    for (t, step) in seq.steps.iter().enumerate() {
        let mut events: Vec<(&str, &str)> = Vec::new();
        if let Some(a) = &step.action {
            let op = match a.op {
                crate::stage2::SwitchOp::Open => "open",
                crate::stage2::SwitchOp::Close => "close",
            };
            events.push((op, &a.edge));
        }
        events.extend(step.pickups.iter().map(|b| ("pickup", b.as_str())));
        events.extend(step.drops.iter().map(|b| ("drop", b.as_str())));
        if events.is_empty() {
            events.push(("none", ""));
        }
        let sweep = replay
            .and_then(|r| r.steps.get(t))
            .and_then(|s| s.min_voltage_pu)
            .map(fmt)
            .unwrap_or_default();
        for (action, id) in events {
            w.write_record([
                step.t.to_string(),
                step.macro_step.to_string(),
                action.to_string(),
                id.to_string(),
                fmt(step.served_kw),
                step.min_voltage_pu.map(fmt).unwrap_or_default(),
                sweep.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-step demand multiplier and active demand of every load bus.
pub fn write_demand_csv<W: Write>(
    model: &NetworkModel,
    seq: &SwitchingSequence,
    out: W,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "bus", "demand_factor", "p_kw"])?;
    for step in &seq.steps {
        for (i, bus) in model.buses().iter().enumerate() {
            if !bus.has_load() || bus.is_source {
                continue;
            }
            let f = step.demand_factor.get(i).copied().unwrap_or(0.0);
            w.write_record([
                step.t.to_string(),
                bus.id.clone(),
                fmt(f),
                fmt(f * bus.total_load_kw()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-step bus voltages from the linear model, one row per bus phase.
pub fn write_voltage_csv<W: Write>(
    model: &NetworkModel,
    seq: &SwitchingSequence,
    out: W,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "bus", "phase", "v_pu"])?;
    for step in &seq.steps {
        for (i, bus) in model.buses().iter().enumerate() {
            for p in bus.phases.indices() {
                let u = step.u.get(i).map_or(0.0, |row| row[p]);
                w.write_record([
                    step.t.to_string(),
                    bus.id.clone(),
                    ["a", "b", "c"][p].to_string(),
                    fmt(u.max(0.0).sqrt()),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Served kW per step for the optimal and naive orders.
pub fn write_comparison_csv<W: Write>(cmp: &Comparison, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "optimal_served_kw", "naive_served_kw"])?;
    let n = cmp
        .optimal_served_kw
        .len()
        .max(cmp.naive_served_kw.as_ref().map_or(0, Vec::len));
    for t in 0..n {
        w.write_record([
            (t + 1).to_string(),
            cmp.optimal_served_kw
                .get(t)
                .copied()
                .map(fmt)
                .unwrap_or_default(),
            cmp.naive_served_kw
                .as_ref()
                .and_then(|v| v.get(t).copied())
                .map(fmt)
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverSettings {
    pub backend: String,
    pub mip_gap: f64,
    pub time_limit_s: Option<f64>,
    pub threads: Option<usize>,
    pub random_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub wall_time_s: f64,
    pub mip_gap: Option<f64>,
    pub num_vars: usize,
    pub num_binaries: usize,
    pub num_constraints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub schema_version: u32,
    pub network: String,
    pub network_hash: String,
    pub scenario: String,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub feeder_loading_cap: f64,
    pub allow_dg_islanding: bool,
    pub substeps_per_action: usize,
    pub settle_substeps: Option<usize>,
    pub cycles: usize,
    pub weights: Option<ObjectiveWeights>,
    pub solver: SolverSettings,
    pub stage1: Option<StageTiming>,
    pub stage2: Option<StageTiming>,
}

impl RunMetadata {
    pub fn new(
        model: &NetworkModel,
        scenario: &FaultScenario,
        s1: &Stage1Options,
        s2: &Stage2Options,
        cycles: usize,
        backend: &str,
    ) -> Self {
        RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            network: model.name().to_string(),
            network_hash: model.content_hash(),
            scenario: scenario.description.clone(),
            v_min_pu: s1.v_min_pu,
            v_max_pu: s1.v_max_pu,
            feeder_loading_cap: s1.feeder_loading_cap,
            allow_dg_islanding: s1.allow_dg_islanding,
            substeps_per_action: s2.substeps_per_action,
            settle_substeps: s2.settle_substeps,
            cycles,
            weights: None,
            solver: SolverSettings {
                backend: backend.to_string(),
                mip_gap: s1.solve.mip_gap,
                time_limit_s: s1.solve.time_limit_s,
                threads: s1.solve.threads,
                random_seed: s1.solve.random_seed,
            },
            stage1: None,
            stage2: None,
        }
    }
}

impl From<&crate::milp::SolveStats> for StageTiming {
    fn from(s: &crate::milp::SolveStats) -> Self {
        StageTiming {
            wall_time_s: s.wall_time_s,
            mip_gap: s.mip_gap,
            num_vars: s.num_vars,
            num_binaries: s.num_binaries,
            num_constraints: s.num_constraints,
        }
    }
}

impl From<&crate::stage2::SolveStatsRecord> for StageTiming {
    fn from(s: &crate::stage2::SolveStatsRecord) -> Self {
        StageTiming {
            wall_time_s: s.wall_time_s,
            mip_gap: s.mip_gap,
            num_vars: s.num_vars,
            num_binaries: s.num_binaries,
            num_constraints: s.num_constraints,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage2::{SequenceStep, SwitchAction, SwitchOp};

    fn step(t: usize, action: Option<SwitchAction>, pickups: &[&str]) -> SequenceStep {
        SequenceStep {
            t,
            macro_step: 1,
            action,
            pickups: pickups.iter().map(|s| s.to_string()).collect(),
            drops: Vec::new(),
            closed_switches: Vec::new(),
            served: Vec::new(),
            demand_factor: Vec::new(),
            served_kw: 12.5,
            weighted_served_kw: 12.5,
            min_voltage_pu: Some(0.99),
            u: Vec::new(),
            p_kw: Vec::new(),
            q_kvar: Vec::new(),
            dg_slack_u: Vec::new(),
        }
    }

    #[test]
    fn sequence_csv_has_one_row_per_event() {
        let seq = SwitchingSequence {
            schema_version: SCHEMA_VERSION,
            network_hash: String::new(),
            substeps_per_action: 2,
            settle_substeps: 0,
            actions: Vec::new(),
            steps: vec![
                step(
                    1,
                    Some(SwitchAction {
                        edge: "t1".into(),
                        op: SwitchOp::Close,
                    }),
                    &["b1", "b2"],
                ),
                step(2, None, &[]),
            ],
            objective: 0.0,
            taps: Vec::new(),
            caps: Vec::new(),
            target_closed: Vec::new(),
            target_served: Vec::new(),
            stats: None,
        };
        let mut buf = Vec::new();
        write_sequence_csv(&seq, None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "1,1,close,t1,12.500000,0.990000,");
        assert_eq!(lines[2], "1,1,pickup,b1,12.500000,0.990000,");
        assert_eq!(lines[4], "2,1,none,,12.500000,0.990000,");
    }
}
